"""Two-layer stochastic sequential dual method.

Solves ``min_{x in X} f_1(f_2(x)) + u(x)`` with a smooth outer layer.  Each
iteration queries the inner oracle twice at ``x_t``: one sample (tag 1)
updates the running estimate ``y_bar`` of ``f_2(x_t)``; the other (tag 0)
supplies the inner Jacobian for the x-step, so the two pieces of the
gradient estimate are independent.

The "dual" form keeps the outer dual as dual samples and evaluates the
inner Lagrangian; the "primal" form works with values directly.  Both
perform the same floating point operations on the iterates.
"""
from __future__ import annotations

import numpy as np

from .core import CompositionProblem, DualSample, LayerDual, SolverDiverged
from .policies import TwoLayerSchedule, two_layer_schedule
from .rng import OracleStreams
from .trace import RunTrace, Tracker

_INNER, _OUTER = 2, 1


def implicit_max(layer, x) -> LayerDual:
    """Inner dual at ``x`` from a step with ``tau = 0``: the (sub)gradient at ``x``."""
    return layer.dual_at(np.asarray(x, dtype=float))


def run_vanilla(problem: CompositionProblem, N: int, seed: int = 0,
                schedule: TwoLayerSchedule | None = None, form: str = "primal",
                tracker: Tracker | None = None, D_Pi1: float | None = None,
                record_keys: bool = False, iterates: list | None = None) -> RunTrace:
    """Run the two-layer method for ``N`` iterations.

    Parameters
    ----------
    problem : CompositionProblem
        Exactly two layers, smooth (or affine) outer layer.
    N : int
    seed : int
    schedule : TwoLayerSchedule, optional
        Defaults to :func:`two_layer_schedule` (strongly convex iff alpha > 0).
    form : {"primal", "dual"}
    tracker : Tracker, optional
    D_Pi1 : float, optional
        Outer dual distance bound, used by the default convex schedule.
    iterates : list, optional
        If given, every ``x_{t+1}`` is appended.

    Returns
    -------
    RunTrace
        With the weighted average ``x_bar`` and last iterate ``x_last``.
    """
    if form not in ("primal", "dual"):
        raise ValueError("form must be 'primal' or 'dual'")
    sched = schedule or two_layer_schedule(problem, N, D_Pi1=D_Pi1)
    f1, f2 = problem.layers
    streams = OracleStreams(seed, record=record_keys)
    x = problem.x0.copy()
    if f2.stochastic:
        y_bar = f2.query(x, streams.generator(_INNER, 0, 0)).value
    else:
        y_bar = f2.value(x)
    acc = np.zeros(problem.dim)
    wsum = 0.0
    for t in range(N):
        g1 = streams.generator(_INNER, t + 1, 1) if f2.stochastic else None
        g0 = streams.generator(_INNER, t + 1, 0) if f2.stochastic else None
        v1, J1 = f2.query(x, g1)
        v0, J0 = f2.query(x, g0)
        tau = sched.tau(t)
        if form == "dual":
            s1 = DualSample(J1, J1 @ x - v1, 1, anchor=x, value=v1)
            s0 = DualSample(J0, J0 @ x - v0, 0, anchor=x, value=v0)
            arg = s1.apply(x)
            y_bar = (arg + tau * y_bar) / (1 + tau)
            og = streams.generator(_OUTER, t + 1, 0) if f1.stochastic else None
            ov, oJ = f1.query(y_bar, og)
            outer = DualSample(oJ, oJ @ y_bar - ov, 0, anchor=y_bar, value=ov)
            g = (outer.pi @ s0.pi)[0]
        else:
            y_bar = (v1 + tau * y_bar) / (1 + tau)
            og = streams.generator(_OUTER, t + 1, 0) if f1.stochastic else None
            g = (f1.query(y_bar, og).jacobian @ J0)[0]
        x = problem.reg.prox_step(x, g, sched.eta(t), problem.domain)
        if not np.all(np.isfinite(x)):
            raise SolverDiverged(f"non-finite iterate at t={t}")
        if iterates is not None:
            iterates.append(x.copy())
        w = sched.weight(t)
        acc += w * x
        wsum += w
        if tracker is not None and tracker.wants(t, t == N - 1):
            tracker.record(t, acc / wsum)
    return RunTrace(rows=tracker.rows if tracker else [], x_bar=acc / wsum, x_last=x,
                    stream_keys=list(streams.keys))
