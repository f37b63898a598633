import numpy as np
import pytest

from ssd.core import Ball, Box, DomainViolation, LayerKind, WrongLayerClass, eval_composition
from ssd.multilayer import run_ssd
from ssd.problems import (composite_problem, default_risk_scenarios, h_gamma, h_gamma_dual_prox,
                          h_gamma_grad, layer_kinds, load_scenarios, make_synthetic_stack, minimax_problem,
                          random_composite, risk_problem, risk_value, semideviation,
                          strongly_convex_benchmark, two_layer_benchmark)
from ssd.reference import reference_solve


def _h_grid(z, gamma):
    p = np.linspace(0, 1, 1_000_001)
    return float(np.max(p * z - gamma * p ** 2 / 2))


def test_h_gamma_examples():
    for g in (0.0, 0.1, 1.0, 3.0):
        assert h_gamma(-1.0, g) == 0
    assert h_gamma(2.0, 1.0) == pytest.approx(1.5)
    assert h_gamma(2.0, 1.0) == pytest.approx(_h_grid(2.0, 1.0), abs=1e-9)
    for g in (0.3, 1.0):
        assert h_gamma(g, g) == pytest.approx(g / 2)
        assert h_gamma(g - 1e-9, g) == pytest.approx(g / 2, abs=1e-8)
        assert h_gamma(g + 1e-9, g) == pytest.approx(g / 2, abs=1e-8)


def test_h_gamma_matches_max_definition():
    for z in np.linspace(-2, 3, 41):
        for g in (0.05, 0.5, 2.0):
            assert h_gamma(z, g) == pytest.approx(_h_grid(z, g), abs=1e-9)


def test_h_gamma_grad_finite_difference():
    for z in np.linspace(-1, 2, 31):
        fd = (h_gamma(z + 1e-7, 0.5) - h_gamma(z - 1e-7, 0.5)) / 2e-7
        assert h_gamma_grad(z, 0.5) == pytest.approx(fd, abs=1e-6)


def test_h_gamma_dual_prox_vs_grid():
    p = np.linspace(0, 1, 200001)
    for y, prev, tau, g in [(0.4, 0.2, 1.0, 0.5), (5.0, 0.0, 1.0, 0.0), (-2.0, 0.7, 0.3, 0.1),
                            (0.1, 0.9, 2.0, 1.0)]:
        obj = -p * y + g * p ** 2 / 2 + tau / 2 * (p - prev) ** 2
        assert h_gamma_dual_prox(y, prev, tau, g) == pytest.approx(p[np.argmin(obj)], abs=1e-5)
    with pytest.raises(DomainViolation):
        h_gamma_dual_prox(1.0, 0.0, 0.0, 0.0)


def test_risk_single_scenario():
    for c in (0.0, 0.5, 1.0):
        p = risk_problem([1.0], [5.0], [[0.0, 0.0]], c=c, gamma=0.0)
        assert eval_composition(p, [0.4, -0.1]) == pytest.approx(5.0, abs=1e-15)


def test_risk_two_scenarios():
    p = risk_problem([0.5, 0.5], [0.0, 2.0], [[0.0], [0.0]], c=1.0, gamma=0.0)
    assert eval_composition(p, [0.3]) == pytest.approx(1.5, abs=1e-15)
    assert semideviation([0.0, 2.0], [0.5, 0.5], 1.0) == 1.5


def test_risk_exact_evaluator_matches_scenario_sum():
    probs, d, C = default_risk_scenarios()
    p = risk_problem(probs, d, C, c=0.7, gamma=0.0)
    rng = np.random.default_rng(0)
    for _ in range(200):
        x = rng.uniform(-1, 1, 2)
        z = C @ x + d
        m = probs @ z
        direct = m + 0.7 * probs @ np.maximum(z - m, 0)
        assert eval_composition(p, x) == pytest.approx(direct, abs=1e-12)
        assert risk_value(p, x) == pytest.approx(direct, abs=1e-12)


def test_risk_smoothing_error_bounded():
    probs, d, C = default_risk_scenarios()
    gamma, c = 0.02, 0.5
    p = risk_problem(probs, d, C, c=c, gamma=gamma)
    rng = np.random.default_rng(1)
    for _ in range(200):
        x = rng.uniform(-1, 1, 2)
        err = risk_value(p, x) - float(p.objective(x))
        assert -1e-12 <= err <= c * gamma / 2 + 1e-12


def test_risk_layers_are_wired_semi_smooth_over_affine():
    probs, d, C = default_risk_scenarios()
    p = risk_problem(probs, d, C)
    assert [layer.kind for layer in p.layers] == [LayerKind.SEMISMOOTH, LayerKind.AFFINE]
    assert p.layers[0].bounds.L_S == pytest.approx(0.5 / 1e-2)
    assert p.stochastic


def test_risk_scenario_oracles_unbiased():
    probs, d, C = default_risk_scenarios()
    p = risk_problem(probs, d, C)
    f2 = p.layers[1]
    x = np.array([0.3, -0.6])
    rng = np.random.default_rng(3)
    vals = np.array([f2.query(x, rng).value for _ in range(40000)])
    se = vals.std(axis=0) / np.sqrt(len(vals)) + 1e-12
    assert np.all(np.abs(vals.mean(axis=0) - f2.value(x)) <= 5 * se)


def test_scenario_loader(tmp_path):
    text = "prob,d,c_1,c_2\n0.25,1.0,0.5,-0.5\n0.75,0.0,1.0,2.0\n"
    probs, d, C = load_scenarios(text)
    assert np.allclose(probs, [0.25, 0.75]) and np.allclose(d, [1, 0]) and C.shape == (2, 2)
    path = tmp_path / "s.csv"
    path.write_text(text)
    assert np.allclose(load_scenarios(path)[2], C)
    with pytest.raises(ValueError):
        load_scenarios("prob,d,c_1\n0.5,1.0,0.5\n0.4,0.0,1.0\n")
    with pytest.raises(ValueError):
        load_scenarios("p,d,c_1\n1.0,1.0,0.5\n")
    with pytest.raises(ValueError):
        load_scenarios("prob,d,c_1\n1.000000002,1.0,0.5\n")
    load_scenarios("prob,d,c_1\n1.0000000005,1.0,0.5\n")


def test_composite_without_l1_is_ridge():
    rng = np.random.default_rng(0)
    B, b = rng.normal(size=(5, 3)), rng.normal(size=5)
    p = composite_problem(np.zeros((2, 3)), B, b, Ball(np.zeros(3), 10.0))
    x_ls = np.linalg.solve(B.T @ B, B.T @ b)
    assert np.linalg.norm(x_ls) < 10
    x = run_ssd(p, 20000).x_bar
    assert float(p.objective(x)) - float(p.objective(x_ls)) < 1e-6


def test_composite_one_dimensional():
    p = composite_problem([[1.0]], [[1.0]], [0.0], Box([-1.0], [1.0]))
    ref = reference_solve(p)
    assert abs(ref.x_star[0]) < 1e-8 and abs(ref.f_star) < 1e-8
    assert eval_composition(p, [0.5]) == pytest.approx(0.5 + 0.125)


def test_minimax_single_problem_matches_composite():
    rng = np.random.default_rng(2)
    A, B, b = rng.normal(size=(2, 3)), rng.normal(size=(4, 3)), rng.normal(size=4)
    mm = minimax_problem([A], [B], [b], Ball(np.zeros(3), 1.0))
    cp = composite_problem(A, B, b, Ball(np.zeros(3), 1.0))
    for x in rng.uniform(-0.5, 0.5, (20, 3)):
        assert float(mm.objective(x)) == pytest.approx(float(cp.objective(x)), abs=1e-12)
    r1, r2 = reference_solve(mm), reference_solve(cp)
    assert np.allclose(r1.x_star, r2.x_star, atol=1e-4) and r1.f_star == pytest.approx(r2.f_star, abs=1e-8)


def test_minimax_symmetric_pair():
    A = np.array([[0.3, 0.1]])
    B = np.array([[1.0, 0.0], [0.0, 1.0]])
    b = np.array([0.6, 0.0])
    mirror = np.diag([-1.0, 1.0])
    mm = minimax_problem([A, A @ mirror], [B, B @ mirror], [b, b], Ball(np.zeros(2), 1.0))
    ref = reference_solve(mm)
    assert abs(ref.x_star[0]) < 1e-6


def test_synthetic_single_smooth_layer():
    p = make_synthetic_stack(["smooth"], n=3, seed=0)
    assert p.k == 1 and p.layers[0].kind is LayerKind.SMOOTH and p.layers[0].bounds.L_f > 0
    x_star, f_star = p.optimum
    assert reference_solve(p).f_star == pytest.approx(f_star, abs=1e-8)


def test_smooth_over_nonsmooth_is_monotone():
    p = make_synthetic_stack(["smooth", "nonsmooth"], n=3, seed=0)
    rng = np.random.default_rng(0)
    for _ in range(100):
        y = rng.normal(scale=3, size=p.layers[0].in_dim)
        pi = p.layers[0].jacobian(y)
        assert np.all(pi >= 0)


@pytest.mark.parametrize("kinds,stoch", [
    (["smooth", "nonsmooth", "smooth"], (3,)),
    (["smoothable", "smooth"], (2,)),
    (["smoothable", "affine"], (1,)),
])
def test_synthetic_guard_rejects_unsupported_stacks(kinds, stoch):
    with pytest.raises(WrongLayerClass):
        make_synthetic_stack(kinds, n=2, stochastic=stoch)


def test_synthetic_planted_optimum_is_certified():
    for kinds in (["smooth", "smoothable", "nonsmooth"], ["smooth", "smooth", "affine"],
                  ["smoothable", "nonsmooth"]):
        p = make_synthetic_stack(kinds, n=2, seed=3)
        ref = reference_solve(p)
        assert ref.f_star == pytest.approx(p.optimum[1], abs=1e-8)


def test_benchmarks_shapes():
    p = two_layer_benchmark(n=2, seed=1)
    assert p.k == 2 and p.stochastic and layer_kinds(p) == ["smooth", "nonsmooth"]
    q = strongly_convex_benchmark()
    assert q.k == 3 and q.alpha == 1.0
    c = random_composite(seed=0)
    assert layer_kinds(c) == ["smoothable+smooth", "affine"]
