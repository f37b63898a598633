import numpy as np
import pytest

from ssd import policies
from ssd.core import Ball, CompositionProblem, Regularizer, eval_composition
from ssd.layers import Block, BoxSmoothable, LeastSquaresLayer
from ssd.multilayer import (BlockState, DualBank, SequentialDualSolver, dual_update, implicit_point,
                            run_restarted, run_ssd, x_update)
from ssd.policies import Regime, build_context
from ssd.problems import make_synthetic_stack, random_composite, random_minimax
from ssd.reference import reference_solve
from ssd.rng import derive_seed
from ssd.trace import Tracker


def _solver(problem, seed=0, N=100):
    return SequentialDualSolver(problem, build_context(problem, N), seed)


def _state(layer, point):
    return BlockState(1, 0, Block(None, None, layer), np.asarray(point, dtype=float), 16)


# -- guesses ----------------------------------------------------------------


def test_first_guess_is_the_sampled_lagrangian():
    p = make_synthetic_stack(["smooth", "smooth", "affine"], [1, 3, 3], n=2, seed=0,
                             stochastic=(2,), noise=0.3)
    s = _solver(p)
    new = DualBank()
    for i in range(p.k, 0, -1):
        y = s.guess(i, new)
        expect = s.x
        for l in range(p.k, i, -1):
            expect = new.take(l, i).apply(expect)
        assert np.array_equal(y, expect)
        s._resample(i, 1, new)


def test_innermost_guess_is_extrapolated_x():
    p = make_synthetic_stack(["smooth", "nonsmooth", "affine"], n=2, seed=1)
    s = _solver(p)
    for _ in range(3):
        s.step()
    th = policies.theta(s.t)
    y = s.guess(p.k, DualBank())
    assert np.allclose(y, s.x + th * (s.x - s.x_prev), atol=1e-15)


def test_stationary_deterministic_guess_is_exact():
    p = make_synthetic_stack(["smooth", "smooth", "affine"], [1, 2, 3], n=3, seed=2)
    s = _solver(p)
    s.x_prev = s.x.copy()
    new = DualBank()
    vals = p.nested_values(s.x)
    s.t = 5
    for i in range(p.k, 0, -1):
        y = s.guess(i, new)
        assert np.allclose(y, vals[i], atol=1e-12)
        for st in s.states[i - 1]:
            if st.implicit:
                st.point = y.copy()
        s._resample(i, 6, new)


# -- dual updates ------------------------------------------------------------


def test_implicit_point_examples():
    assert np.array_equal(implicit_point(np.array([4.0]), np.array([2.0]), 0.0), [4.0])
    assert implicit_point(np.array([4.0]), np.array([2.0]), 1.0)[0] == 3.0


def test_dual_update_quadratic_matches_explicit_prox():
    layer = LeastSquaresLayer([[1.0]], [0.0])  # y^2 / 2
    st = _state(layer, [2.0])
    dual_update(st, np.array([4.0]), 1.0)
    assert st.point[0] == 3.0
    pi = layer.jacobian(st.point)[0, 0]
    grid = np.linspace(-10, 10, 200001)
    obj = -grid * 4.0 + grid ** 2 / 2 + (grid - 2.0) ** 2 / 2
    assert pi == pytest.approx(grid[np.argmin(obj)], abs=1e-4)
    assert pi == pytest.approx(3.0)


def test_dual_update_tau_zero_is_maximization():
    layer = LeastSquaresLayer([[1.0, 0.5]], [0.2])
    st = _state(layer, [2.0, -1.0])
    dual_update(st, np.array([0.3, 0.7]), 0.0)
    assert np.array_equal(st.point, [0.3, 0.7])


def test_smoothable_plus_clip():
    plus = BoxSmoothable([[0.0]], [[1.0]])
    st = _state(plus, plus.initial_dual())
    dual_update(st, np.array([10.0]), 1.0)
    assert st.point[0, 0] == 1.0
    grid = np.linspace(0, 1, 100001)
    for y, prev, tau in [(0.3, 0.2, 2.0), (-1.0, 0.5, 1.0), (0.05, 0.0, 0.5)]:
        st = _state(plus, [[prev]])
        dual_update(st, np.array([y]), tau)
        obj = -grid * y + tau / 2 * (grid - prev) ** 2
        assert st.point[0, 0] == pytest.approx(grid[np.argmin(obj)], abs=2e-5)


# -- sampling ------------------------------------------------------------------


def test_deterministic_layer_samples_identical():
    p = make_synthetic_stack(["smooth", "smooth", "affine"], [1, 3, 3], n=2, seed=0)
    s = _solver(p)
    for i in range(1, p.k + 1):
        first = s.bank.take(i, 0)
        for tag in range(i):
            other = s.bank.take(i, tag)
            assert np.array_equal(first.pi, other.pi) and np.array_equal(first.fstar, other.fstar)


def test_stochastic_tags_use_distinct_streams():
    p = make_synthetic_stack(["smooth", "smooth", "affine"], [1, 3, 3], n=2, seed=0,
                             stochastic=(1, 2), noise=0.5)
    out = []
    r = run_ssd(p, 30, seed=3, record_keys=True, solver_out=out)
    keys = r.stream_keys
    assert len(keys) == len(set(keys))
    s = out[0]
    a, b = s.bank.take(2, 0), s.bank.take(2, 1)
    assert not np.array_equal(a.pi, b.pi)
    for t in range(1, 31):
        tags2 = sorted(tag for (oid, tt, tag) in keys if tt == t and oid == 32)
        assert tags2 == [0, 1]


def test_read_order_contract():
    p = make_synthetic_stack(["smooth", "smooth", "smooth", "affine"], [1, 2, 2, 2], n=2, seed=0,
                             stochastic=(2, 3), noise=0.2)
    s = _solver(p)
    for _ in range(4):
        s.step()
        for kind, layer, tag in s.read_log:
            if kind == "x":
                assert tag == 0
            else:
                assert layer > tag
        guess_tags = {(layer, tag) for kind, layer, tag in s.read_log if kind == "guess"}
        assert guess_tags == {(l, i) for i in range(1, p.k) for l in range(i + 1, p.k + 1)}


# -- x updates -------------------------------------------------------------------


def test_x_update_examples():
    p = CompositionProblem([LeastSquaresLayer([[1.0, 0.0]], [0.0])], Ball([0.0, 0.0], 1.0))
    x = np.array([0.2, 0.3])
    assert np.array_equal(x_update(p, x, np.zeros(2), 1.0), x)
    assert np.allclose(x_update(p, np.zeros(2), np.array([-2.0, 0.0]), 1.0), [1.0, 0.0])
    q = CompositionProblem([LeastSquaresLayer([[1.0, 0.0]], [0.0])], Ball([0.0, 0.0], 1e9),
                           Regularizer(0.5, np.array([1.0, -1.0])))
    g, eta = np.array([0.4, 0.1]), 2.0
    expect = (eta * x - g + 0.5 * np.array([1.0, -1.0])) / (eta + 0.5)
    assert np.allclose(x_update(q, x, g, eta), expect)


# -- full runs ---------------------------------------------------------------------


def test_replay_determinism():
    p = make_synthetic_stack(["smooth", "smooth", "affine"], [1, 3, 3], n=2, seed=5,
                             stochastic=(1, 2), noise=0.4)
    a, b = run_ssd(p, 200, seed=7), run_ssd(p, 200, seed=7)
    assert np.array_equal(a.x_bar, b.x_bar) and np.array_equal(a.x_last, b.x_last)


def test_three_layer_mixed_stack_converges_with_weak_duality():
    p = make_synthetic_stack(["smooth", "smoothable", "nonsmooth"], n=2, seed=1)
    x_star, f_star = p.optimum
    gaps = []
    for N in (100, 400, 1600):
        tr = Tracker(p, x_star, f_star, p.exact_duals(x_star), every=max(1, N // 40))
        r = run_ssd(p, N, tracker=tr)
        assert all(row.q_gap >= -1e-9 for row in r.rows)
        gaps.append(r.final.f_gap)
    assert all(g >= -1e-12 and np.isfinite(g) for g in gaps)
    assert gaps[0] > gaps[1] > gaps[2]


def test_composite_and_minimax_converge():
    for p in (random_composite(seed=2), random_minimax(seed=1)):
        ref = reference_solve(p)
        g1 = float(p.objective(run_ssd(p, 200).x_bar)) - ref.f_star
        g2 = float(p.objective(run_ssd(p, 3200).x_bar)) - ref.f_star
        assert -1e-8 <= g2 < g1


def test_single_smooth_layer_restart_is_linear():
    p = make_synthetic_stack(["smooth"], n=3, seed=0, alpha=1.0)
    x_star = p.optimum[0]
    D0 = p.domain.diameter ** 2  # bounds 0.5 ||x0 - x*||^2
    r = run_restarted(p, D0, 6)
    for j, x in enumerate(r.epoch_points, start=1):
        assert 0.5 * float(np.sum((x - x_star) ** 2)) <= 2.0 ** -j * D0


def test_restart_all_smooth_halves_distance():
    p = make_synthetic_stack(["smooth", "smooth", "affine"], [1, 3, 3], n=3, seed=0, alpha=1.0)
    x_star = p.optimum[0]
    D0 = p.domain.diameter ** 2
    r = run_restarted(p, D0, 5)
    for j, x in enumerate(r.epoch_points, start=1):
        assert 0.5 * float(np.sum((x - x_star) ** 2)) <= 2.0 ** -j * D0


def test_single_epoch_equals_plain_run():
    p = make_synthetic_stack(["smooth", "smooth", "affine"], [1, 3, 3], n=2, seed=4, alpha=0.5,
                             stochastic=(2,), noise=0.2)
    r = run_restarted(p, 1.0, 1, seed=3)
    n = policies.restart_length(p, 1.0, Regime.STO_STRONGLY_CONVEX)
    plain = run_ssd(p, n, seed=derive_seed(3, 0))
    assert r.epochs == [n]
    assert np.array_equal(r.x_bar, plain.x_bar) and np.array_equal(r.x_last, plain.x_last)
    with pytest.raises(ValueError):
        run_restarted(p, 1.0, 0)


def test_epoch_lengths_grow_geometrically_with_nonsmooth_layers():
    p = make_synthetic_stack(["smooth", "nonsmooth", "affine"], n=2, seed=0, alpha=1.0)
    r = run_restarted(p, 1.0, 4)
    lengths = np.diff([0] + r.epochs)
    assert np.all(lengths[1:] / lengths[:-1] > 1.5)


def test_restart_needs_strong_convexity():
    p = make_synthetic_stack(["smooth", "affine"], n=2, seed=0)
    with pytest.raises(ValueError):
        run_restarted(p, 1.0, 2, Regime.DET_CONVEX)


def test_objective_matches_composition():
    p = make_synthetic_stack(["smooth", "nonsmooth", "affine"], n=3, seed=2)
    x = np.array([0.1, 0.2, -0.1])
    assert float(p.objective(x)) == pytest.approx(eval_composition(p, x))
