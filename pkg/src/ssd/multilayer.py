"""Stochastic sequential dual method for compositions of any depth.

Each iteration sweeps the layers from the innermost (``k``) to the outermost
(``1``).  Layer ``i`` forms a guess of its argument from fresh samples of the
layers inside it plus a momentum correction, takes a dual step, and then
draws ``i`` independent dual samples tagged ``0..i-1``.  Sample ``j`` of layer
``i`` is reserved for the guess of layer ``j`` (tag 0 feeds the x-update), so
every consumer sees samples independent of the ones used elsewhere.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import policies
from .core import (CompositionProblem, DualSample, LayerDual, MissingSample, SolverDiverged)
from .layers import Block, place
from .rng import OracleStreams, derive_seed
from .trace import RunTrace, Tracker

_INIT_TAG = 255


@dataclass
class BlockState:
    """Dual iterate of one block: an associated point or an explicit matrix."""

    layer: int
    index: int
    block: Block
    point: np.ndarray
    oracle_id: int

    @property
    def implicit(self) -> bool:
        return self.block.layer.kind.implicit


def implicit_point(y_tilde: np.ndarray, y_bar: np.ndarray, tau: float) -> np.ndarray:
    """Associated point of the implicit dual prox: ``(y~ + tau y_bar) / (1 + tau)``."""
    return y_tilde.copy() if tau == 0 else (y_tilde + tau * y_bar) / (1 + tau)


def dual_update(st: BlockState, y_tilde: np.ndarray, tau: float) -> None:
    """Dual prox step of one block (implicit for smooth-like blocks, explicit otherwise)."""
    if st.implicit:
        st.point = implicit_point(y_tilde, st.point, tau)
    else:
        st.point = st.block.layer.dual_step(y_tilde, st.point, tau)


def x_update(problem: CompositionProblem, x: np.ndarray, g: np.ndarray, eta: float) -> np.ndarray:
    """``argmin_{z in X} <g, z> + u(z) + eta/2 ||z - x||^2``."""
    return problem.reg.prox_step(x, g, eta, problem.domain)


class DualBank:
    """Dual samples of one iteration, keyed by ``(layer, tag)``."""

    def __init__(self):
        self._s: dict[tuple[int, int], DualSample] = {}

    def put(self, layer: int, sample: DualSample) -> None:
        self._s[(layer, sample.tag)] = sample

    def take(self, layer: int, tag: int) -> DualSample:
        try:
            s = self._s[(layer, tag)]
        except KeyError:
            raise MissingSample(f"no sample of layer {layer} with tag {tag}") from None
        assert s.tag == tag
        return s

    def __len__(self):
        return len(self._s)


class SequentialDualSolver:
    """State machine behind :func:`run_ssd`.

    Parameters
    ----------
    problem : CompositionProblem
    ctx : ScheduleContext
        Constants and regime (see :func:`policies.build_context`).
    seed : int
    x0 : array, optional
        Overrides the problem's starting point.
    record_keys : bool
        Keep the list of random stream keys that were used.
    """

    def __init__(self, problem: CompositionProblem, ctx, seed: int = 0, x0=None,
                 record_keys: bool = False):
        self.p = problem
        self.ctx = ctx
        self.streams = OracleStreams(seed, record=record_keys)
        self.x = problem.domain.project(problem.x0 if x0 is None else np.asarray(x0, dtype=float))
        self.x_prev = self.x.copy()
        self.t = 0
        self.states = self._initial_states()
        self.bank = DualBank()
        for i in range(problem.k, 0, -1):
            self._resample(i, 0, self.bank)
        self.read_log: list[tuple[str, int, int]] = []

    # -- setup ---------------------------------------------------------------

    def _initial_states(self) -> list[list[BlockState]]:
        p = self.p
        if p.stochastic:
            # one draw of the nested values, innermost first
            anchors = [None] * p.k
            y = self.x
            for i in range(p.k, 0, -1):
                anchors[i - 1] = y
                layer = p.layers[i - 1]
                v = np.zeros(layer.out_dim)
                for j, b in enumerate(layer.blocks()):
                    rng = self.streams.generator(16 * i + j, 0, _INIT_TAG)
                    sv, sJ = b.layer.query(y if b.cols is None else y[b.cols], rng)
                    place(np.zeros((layer.out_dim, layer.in_dim)), v, b, sJ, sv)
                y = v
        else:
            anchors = p.nested_values(self.x)[1:]
        states = []
        for i, layer in enumerate(p.layers, start=1):
            row = []
            for j, b in enumerate(layer.blocks()):
                if b.layer.kind.implicit:
                    pt = anchors[i - 1] if b.cols is None else anchors[i - 1][b.cols]
                    pt = np.array(pt, dtype=float)
                else:
                    pt = b.layer.initial_dual()
                row.append(BlockState(i, j, b, pt, 16 * i + j))
            states.append(row)
        return states

    # -- sampling ------------------------------------------------------------

    def _sample_block(self, st: BlockState, t_key: int, tag: int):
        sub = st.block.layer
        if not st.implicit:
            return st.point, sub.conj_value(st.point), None
        rng = self.streams.generator(st.oracle_id, t_key, tag) if sub.stochastic else None
        v, J = sub.query(st.point, rng)
        return J, J @ st.point - v, v

    def _resample(self, i: int, t_key: int, bank: DualBank) -> None:
        """Draw ``i`` dual samples of layer ``i`` with tags ``0..i-1``."""
        layer = self.p.layers[i - 1]
        row = self.states[i - 1]
        cached = None
        for tag in range(i):
            if cached is not None:
                s = cached
                bank.put(i, DualSample(s.pi, s.fstar, tag, s.anchor, s.value))
                continue
            if len(row) == 1:
                pi, fstar, v = self._sample_block(row[0], t_key, tag)
                anchor = row[0].point if v is not None else None
                s = DualSample(pi, fstar, tag, anchor, v)
            else:
                pi = np.zeros((layer.out_dim, layer.in_dim))
                fstar = np.zeros(layer.out_dim)
                for st in row:
                    bpi, bf, _ = self._sample_block(st, t_key, tag)
                    place(pi, fstar, st.block, bpi, bf)
                s = DualSample(pi, fstar, tag)
            bank.put(i, s)
            if not layer.stochastic:
                cached = s  # deterministic layers give the same sample for every tag

    # -- one iteration -------------------------------------------------------

    def guess(self, i: int, new: DualBank) -> np.ndarray:
        """Predicted argument of layer ``i`` (reads tag-``i`` samples only)."""
        k = self.p.k
        y = self.x
        for l in range(k, i, -1):
            y = new.take(l, i).apply(y)
            self.read_log.append(("guess", l, i))
        th = policies.theta(self.t)
        if th:
            d = self.x - self.x_prev
            for l in range(k, i, -1):
                d = self.bank.take(l, i).pi @ d
            y = y + th * d
        return y

    def step(self) -> None:
        t, k = self.t, self.p.k
        t_key = t + 1
        new = DualBank()
        self.read_log.clear()
        for i in range(k, 0, -1):
            y_tilde = self.guess(i, new)
            for st in self.states[i - 1]:
                bc = self.ctx.blocks[i - 1][st.index]
                tau = policies.tau(bc, t, self.ctx)
                arg = y_tilde if st.block.cols is None else y_tilde[st.block.cols]
                dual_update(st, arg, tau)
            self._resample(i, t_key, new)
        g = None
        for l in range(1, k + 1):
            pi = new.take(l, 0).pi
            self.read_log.append(("x", l, 0))
            g = pi if g is None else g @ pi
        x_new = x_update(self.p, self.x, g[0], policies.eta(t, self.ctx))
        if not np.all(np.isfinite(x_new)):
            raise SolverDiverged(f"non-finite iterate at t={t}")
        self.x_prev, self.x = self.x, x_new
        self.bank = new
        self.t += 1

    def current_duals(self) -> list[LayerDual]:
        """Exact duals of the current iterate (for the gap function)."""
        out = []
        for layer, row in zip(self.p.layers, self.states):
            if len(row) == 1:
                st = row[0]
                out.append(layer.dual_at(st.point) if st.implicit
                           else LayerDual(st.point, layer.conj_value(st.point)))
                continue
            pi = np.zeros((layer.out_dim, layer.in_dim))
            fstar = np.zeros(layer.out_dim)
            for st in row:
                sub = st.block.layer
                d = sub.dual_at(st.point) if st.implicit else LayerDual(st.point, sub.conj_value(st.point))
                place(pi, fstar, st.block, d.pi, d.fstar)
            out.append(LayerDual(pi, fstar))
        return out


def run_ssd(problem: CompositionProblem, N: int, regime=None, seed: int = 0,
            tracker: Tracker | None = None, x0=None, overrides: dict | None = None,
            M_L: dict | None = None, record_keys: bool = False, solver_out: list | None = None
            ) -> RunTrace:
    """Run ``N`` iterations and return the weighted ergodic average.

    Parameters
    ----------
    problem : CompositionProblem
    N : int
        Horizon (some stepsizes depend on it).
    regime : Regime, optional
        Defaults to the regime implied by ``alpha`` and stochasticity.
    seed : int
        Master seed of the oracle streams.
    tracker : Tracker, optional
        Records a trace row per iteration.
    solver_out : list, optional
        If given, the solver object is appended (for inspection in tests).
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    ctx = policies.build_context(problem, N, regime, overrides, M_L)
    solver = SequentialDualSolver(problem, ctx, seed, x0, record_keys)
    if solver_out is not None:
        solver_out.append(solver)
    acc = np.zeros(problem.dim)
    wsum = 0.0
    want_q = tracker is not None and tracker.ref_duals is not None
    for t in range(N):
        solver.step()
        w = policies.weight(t)
        acc += w * solver.x
        wsum += w
        if tracker is not None and tracker.wants(t, t == N - 1):
            tracker.record(t, acc / wsum, solver.x, solver.current_duals() if want_q else None)
    return RunTrace(rows=tracker.rows if tracker else [], x_bar=acc / wsum, x_last=solver.x.copy(),
                    stream_keys=list(solver.streams.keys))


def run_restarted(problem: CompositionProblem, half_dist0: float, epochs: int, regime=None,
                  seed: int = 0, tracker: Tracker | None = None, factor: float = 0.5,
                  overrides: dict | None = None) -> RunTrace:
    """Restarted runs for strongly convex problems.

    Epoch ``j`` runs for the smallest horizon whose distance bound shrinks the
    current bound ``D_j`` (on ``0.5 ||x - x*||^2``) by ``factor``, starting from
    the previous epoch's last iterate.  The final epoch returns its ergodic
    average.
    """
    regime = regime or policies.default_regime(problem)
    if not regime.strongly_convex:
        raise ValueError("restarts need a strongly convex regime")
    if epochs < 1:
        raise ValueError("need at least one epoch (a single epoch is a plain run)")
    x = problem.x0
    D = float(half_dist0)
    out = RunTrace()
    offset = 0
    for j in range(epochs):
        n = policies.restart_length(problem, D, regime, factor, overrides=overrides)
        sub = None
        if tracker is not None:
            sub = Tracker(problem, tracker.x_star, tracker.f_star, tracker.ref_duals,
                          tracker.timing, tracker.every)
        res = run_ssd(problem, n, regime, derive_seed(seed, j), sub, x0=x, overrides=overrides)
        if sub is not None:
            tracker.rows.extend(r._replace(t=r.t + offset) for r in sub.rows)
        offset += n
        out.epochs.append(offset)
        x = res.x_last
        out.epoch_points.append(x.copy())
        out.x_bar = res.x_bar
        D *= factor
    out.x_last = x
    out.rows = tracker.rows if tracker is not None else []
    return out
