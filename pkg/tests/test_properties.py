import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ssd.core import Ball, Box, ergodic_average, weighted_bregman_check
from ssd.harness import slope_estimate
from ssd.layers import SoftplusLayer
from ssd.multilayer import implicit_point
from ssd.problems import h_gamma, h_gamma_dual_prox
from ssd.trace import TraceRow, trace_from_csv, trace_to_csv

finite = st.floats(-1e6, 1e6, allow_nan=False)
vec3 = arrays(np.float64, 3, elements=finite)


@given(st.lists(vec3, min_size=1, max_size=8), st.data())
def test_ergodic_average_in_hull(xs, data):
    w = data.draw(st.lists(st.floats(0.01, 100), min_size=len(xs), max_size=len(xs)))
    avg = ergodic_average(xs, w)
    lo, hi = np.min(xs, axis=0), np.max(xs, axis=0)
    tol = 1e-9 * (1 + np.abs(lo) + np.abs(hi))
    assert np.all(avg >= lo - tol) and np.all(avg <= hi + tol)


@given(vec3, vec3)
def test_ball_projection_idempotent_and_nonexpansive(a, b):
    ball = Ball(np.zeros(3), 2.0)
    pa, pb = ball.project(a), ball.project(b)
    assert np.linalg.norm(pa) <= 2.0 * (1 + 1e-12)
    assert np.allclose(ball.project(pa), pa)
    assert np.linalg.norm(pa - pb) <= np.linalg.norm(a - b) * (1 + 1e-12) + 1e-9


@given(vec3)
def test_box_projection_inside(a):
    box = Box([-1.0, 0.0, 2.0], [1.0, 0.5, 3.0])
    assert box.contains(box.project(a))


@given(st.floats(-100, 100), st.floats(1e-3, 10))
def test_h_gamma_sandwich(z, gamma):
    v = float(h_gamma(z, gamma))
    plus = max(z, 0.0)
    assert plus - gamma / 2 - 1e-12 <= v <= plus + 1e-12


@given(st.floats(-10, 10), st.floats(0, 1), st.floats(0.01, 10), st.floats(0, 5))
def test_h_gamma_dual_prox_optimality(y, prev, tau, gamma):
    p = float(h_gamma_dual_prox(y, prev, tau, gamma))
    assert 0 <= p <= 1
    # first-order condition on [0, 1]
    d = -y + gamma * p + tau * (p - prev)
    if 0 < p < 1:
        assert abs(d) < 1e-9 * (1 + abs(y) + tau)
    elif p == 0:
        assert d >= -1e-9
    else:
        assert d <= 1e-9


@given(vec3, vec3, st.floats(0, 1e3))
def test_implicit_point_between(yt, yb, tau):
    p = implicit_point(yt, yb, tau)
    lo, hi = np.minimum(yt, yb), np.maximum(yt, yb)
    tol = 1e-9 * (1 + np.abs(lo) + np.abs(hi))
    assert np.all(p >= lo - tol) and np.all(p <= hi + tol)


@settings(max_examples=50)
@given(arrays(np.float64, 2, elements=st.floats(-5, 5)), arrays(np.float64, 2, elements=st.floats(-5, 5)),
       arrays(np.float64, 3, elements=st.floats(0, 3)))
def test_smooth_three_point_inequality(p1, p2, w):
    layer = SoftplusLayer([[1.0, -0.5], [0.3, 0.2], [-0.7, 0.9]], [0.1, -0.2, 0.0])
    lhs, rhs = weighted_bregman_check(layer, p1, p2, w)
    assert lhs >= rhs - 1e-10 * (1 + abs(rhs))


opt_float = st.one_of(st.none(), st.floats(allow_nan=False, allow_infinity=False))


@given(st.lists(st.tuples(opt_float, opt_float, opt_float, opt_float), max_size=10))
def test_trace_csv_round_trip(cells):
    rows = [TraceRow(t, *c) for t, c in enumerate(cells)]
    assert trace_from_csv(trace_to_csv(rows)) == rows


@given(st.floats(-3, 0.5), st.floats(1e-3, 1e3))
def test_slope_recovers_power_law(exponent, scale):
    Ns = [10, 100, 1000, 10000]
    assert abs(slope_estimate([(n, scale * n ** exponent) for n in Ns]) - exponent) < 1e-9
