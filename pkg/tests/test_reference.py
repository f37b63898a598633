import numpy as np
import pytest

from ssd.core import Ball, Box, CompositionProblem, NoConvergenceCertificate, Regularizer
from ssd.layers import AbsLayer, AffineLayer, LeastSquaresLayer
from ssd.problems import (composite_problem, default_risk_scenarios, make_synthetic_stack,
                          random_composite, risk_problem)
from ssd.reference import ellipsoid, grid_zoom, projected_subgradient, reference_solve


def test_quadratic_regularizer_only():
    # 0 * x + (x - c)^2 with the minimizer inside the ball
    c = np.array([0.3, -0.2, 0.1])
    p = CompositionProblem([AffineLayer(np.zeros((1, 3)))], Ball(np.zeros(3), 1.0),
                           Regularizer(2.0, c))
    ref = reference_solve(p, tol=1e-12)
    assert np.allclose(ref.x_star, c, atol=1e-6)
    assert abs(ref.f_star) < 1e-12


def test_one_dimensional_abs_plus_square():
    p = composite_problem([[1.0]], [[1.0]], [0.0], Box([-1.0], [1.0]))
    x, f, lower, _ = ellipsoid(p, tol=1e-12)
    assert abs(x[0]) < 1e-11 and f < 1e-11 and lower <= 0 <= f


def test_ellipsoid_lower_bound_is_valid():
    for seed in range(3):
        p = make_synthetic_stack(["smooth", "smoothable", "nonsmooth"], n=3, seed=seed)
        x, f, lower, _ = ellipsoid(p, tol=1e-9)
        f_star = p.optimum[1]
        assert lower <= f_star + 1e-12 and f - f_star <= 1e-9 + 1e-12


def test_ellipsoid_handles_box_constraints():
    # |x1 - 2| + |x2 + 2| over [-1, 1]^2: optimum at the corner (1, -1)
    p = CompositionProblem([AffineLayer([[1.0, 1.0]]), AbsLayer(np.eye(2), [-2.0, 2.0])],
                           Box([-1.0, -1.0], [1.0, 1.0]))
    ref = reference_solve(p, tol=1e-9)
    assert np.allclose(ref.x_star, [1.0, -1.0], atol=1e-6) and ref.f_star == pytest.approx(2.0, abs=1e-9)


def test_risk_grid_agrees_with_subgradient():
    probs, d, C = default_risk_scenarios()
    p = risk_problem(probs, d, C, gamma=0.0)
    _, f_grid = grid_zoom(p)
    _, f_sub = projected_subgradient(p, 20000)
    assert abs(f_grid - f_sub) < 1e-5
    ref = reference_solve(p)
    assert ref.f_star <= f_grid + 1e-8 and ref.f_star <= f_sub + 1e-8


def test_reference_matches_planted_optimum():
    p = make_synthetic_stack(["smooth", "nonsmooth", "affine"], n=4, seed=1)
    ref = reference_solve(p, tol=1e-9)
    assert ref.f_star == pytest.approx(p.optimum[1], abs=1e-9)
    assert ref.lower <= p.optimum[1] + 1e-12


def test_reference_composite_certificate():
    ref = reference_solve(random_composite(seed=0, n=10), tol=1e-9)
    assert ref.tol <= 1e-9 and ref.f_star - ref.lower <= 1e-9


def test_grid_rejects_high_dimension():
    with pytest.raises(ValueError):
        grid_zoom(random_composite(seed=0, n=3))


def test_raises_when_certificate_not_reached():
    p = make_synthetic_stack(["smooth", "nonsmooth", "affine"], n=4, seed=1)
    with pytest.raises(NoConvergenceCertificate):
        reference_solve(p, tol=1e-10, subgradient_iters=0, max_iter=5)


def test_lsq_layer_minimizer():
    B = np.array([[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]])
    b = np.array([0.2, -0.3, 0.1])
    p = CompositionProblem([LeastSquaresLayer(B, b)], Ball(np.zeros(2), 5.0))
    ref = reference_solve(p, tol=1e-11)
    assert np.allclose(ref.x_star, np.linalg.lstsq(B, b, rcond=None)[0], atol=1e-5)
