"""Stepsize policies, problem constants and noise bounds.

Each layer (or mixture block) gets a dual stepsize ``tau`` chosen by its class
and by whether its argument is exact or noisy.  The primal stepsize ``eta``
collects the per-layer terms ``H^-`` (decaying like ``1/t``), ``H^+``
(constant in ``t``) and, in strongly convex regimes, ``(t + 1) alpha / 3``.

Constants per block: ``M_p`` bounds the product of the outer duals and
``M_q`` the product of the inner ones (defaults: products of the layer
``M_Pi`` bounds).  Scaled constants follow ``L~ = M_p L M_q^2``,
``D~ = M_p D_Pi M_q`` and ``M~ = M_p M_Pi M_q``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .core import (ArgType, CompositionProblem, LayerBounds, LayerKind, MissingBound,
                   NonsmoothNoisyUnsupported)


class Regime(enum.Enum):
    DET_CONVEX = "det_convex"
    STO_CONVEX = "sto_convex"
    DET_STRONGLY_CONVEX = "det_strongly_convex"
    STO_STRONGLY_CONVEX = "sto_strongly_convex"

    @property
    def strongly_convex(self) -> bool:
        return self in (Regime.DET_STRONGLY_CONVEX, Regime.STO_STRONGLY_CONVEX)

    @property
    def stochastic(self) -> bool:
        return self in (Regime.STO_CONVEX, Regime.STO_STRONGLY_CONVEX)

    @classmethod
    def parse(cls, text: str) -> "Regime":
        key = text.strip().lower().replace("-", "_")
        aliases = {"detconvex": "det_convex", "stoconvex": "sto_convex",
                   "detstronglyconvex": "det_strongly_convex",
                   "stostronglyconvex": "sto_strongly_convex"}
        key = aliases.get(key.replace("_", ""), key)
        return cls(key)


def default_regime(problem: CompositionProblem) -> Regime:
    if problem.alpha > 0:
        return Regime.STO_STRONGLY_CONVEX if problem.stochastic else Regime.DET_STRONGLY_CONVEX
    return Regime.STO_CONVEX if problem.stochastic else Regime.DET_CONVEX


# ---------------------------------------------------------------------------
# noise constants


def aggregate_bounds(layer) -> LayerBounds:
    """Bounds of a whole layer (Frobenius aggregation over mixture blocks)."""
    if layer.kind is not LayerKind.MIXTURE:
        return layer.bounds
    bs = [b.layer.bounds for b in layer.blocks()]
    rss = lambda name: float(np.sqrt(sum(getattr(b, name) ** 2 for b in bs)))
    M_f = rss("M_f") if layer.mode == "rows" else float(sum(b.M_f for b in bs))
    return LayerBounds(M_Pi=rss("M_Pi"), sigma_f=rss("sigma_f"), sigma_pi=rss("sigma_pi"), M_f=M_f,
                       M_L=layer.bounds.M_L)


@dataclass(frozen=True)
class NoiseConstants:
    """Variance bounds of the stochastic duals and Lagrangians.

    Arrays are indexed by layer number: entry ``i`` of ``sigma_pi_from`` bounds
    the standard deviation of ``pi_i(xi) ... pi_k(xi)``; entry ``i`` of
    ``sigma_lag`` that of ``L_i(x, pi_{i:}(xi))`` (so ``sigma_lag[k+1] = 0``);
    entry ``r`` of ``M_L`` bounds ``||L_r||``.  Entry 0 is unused.
    """

    sigma_pi_from: np.ndarray
    sigma_lag: np.ndarray
    M_L: np.ndarray
    sigma_Pi_tilde: float
    sigma_Delta_tilde: float


def noise_constants(problem: CompositionProblem, M_L: dict | None = None) -> NoiseConstants:
    """Propagate per-layer variance bounds through the stack.

    ``M_L`` optionally overrides the Lagrangian bound of some layers
    (``{r: value}``, ``r`` in ``2..k+1``).  By default
    ``M_{L,k+1} = max_{x in X} ||x||`` and ``M_{L,r} = M_f + M_Pi M_{L,r+1}``.
    """
    k = problem.k
    bnd = [None] + [aggregate_bounds(layer) for layer in problem.layers]
    Mpi = np.array([1.0] + [b.M_Pi for b in bnd[1:]])
    spi = np.array([0.0] + [b.sigma_pi for b in bnd[1:]])
    sf = np.array([0.0] + [b.sigma_f for b in bnd[1:]])
    over = dict(M_L or {})
    ML = np.zeros(k + 2)
    ML[k + 1] = over.get(k + 1, problem.domain.max_norm)
    for r in range(k, 0, -1):
        given = over.get(r, bnd[r].M_L)
        ML[r] = given if given is not None else bnd[r].M_f + Mpi[r] * ML[r + 1]

    def prod(a, b):  # prod_{l=a}^{b} M_Pi,l (empty -> 1)
        return float(np.prod(Mpi[a:b + 1])) if b >= a else 1.0

    sig_pi_from = np.zeros(k + 2)
    sig_lag = np.zeros(k + 2)
    for i in range(1, k + 1):
        sig_pi_from[i] = math.sqrt(sum(prod(i, r - 1) ** 2 * spi[r] ** 2 * prod(r + 1, k) ** 2
                                       for r in range(i, k + 1)))
    for i in range(2, k + 2):
        # variance of L_i, i.e. of the argument handed to layer i - 1
        sig_lag[i] = math.sqrt(sum(prod(i, r - 1) ** 2 * (6 * spi[r] ** 2 * ML[r + 1] ** 2 + 4 * sf[r] ** 2)
                                   for r in range(i, k + 1)))
    sig_Pi = 2 * math.sqrt(sum(prod(1, i - 1) ** 2 * Mpi[i] ** 2 * sig_pi_from[i + 1] ** 2
                               for i in range(1, k)))
    sig_Delta = sum(prod(1, i - 1) * Mpi[i] * sig_lag[i + 1] for i in range(1, k))
    return NoiseConstants(sig_pi_from, sig_lag, ML, sig_Pi, float(sig_Delta))


# ---------------------------------------------------------------------------
# schedule context


@dataclass(frozen=True)
class BlockConstants:
    """Constants of one dual block (a layer, or a piece of a mixture)."""

    layer: int
    block: int
    kind: LayerKind
    arg: ArgType
    bounds: LayerBounds
    M_p: float
    M_q: float
    sigma_Lq: float
    M_qN: float | None = None

    @property
    def L_tilde(self):
        return self.M_p * self.bounds.L_f * self.M_q ** 2

    @property
    def D_tilde(self):
        return self.M_p * self.bounds.D_Pi * self.M_q

    @property
    def M_tilde(self):
        return self.M_p * self.bounds.M_Pi * self.M_q

    @property
    def LS_tilde(self):
        return self.M_p * self.bounds.L_S * self.M_q ** 2

    @property
    def MN_tilde(self):
        # the non-smooth block of a semi-smooth layer may see a smaller inner Jacobian
        return self.M_p * self.bounds.M_N * (self.M_q if self.M_qN is None else self.M_qN)

    @property
    def nonsmooth_like(self) -> bool:
        """Contributes an ``H_alpha`` term (counted in ``k_n``)."""
        return self.kind in (LayerKind.SMOOTHABLE, LayerKind.NONSMOOTH, LayerKind.SEMISMOOTH)


@dataclass(frozen=True)
class ScheduleContext:
    regime: Regime
    N: int
    alpha: float
    D_X: float
    k: int
    blocks: tuple
    noise: NoiseConstants
    c_override: float | None = None
    k_n: int = field(init=False)
    c: float = field(init=False)

    def __post_init__(self):
        k_n = sum(b.nonsmooth_like for layer in self.blocks for b in layer)
        object.__setattr__(self, "k_n", k_n)
        c = 0.0
        if self.regime.strongly_convex:
            if self.alpha <= 0:
                raise MissingBound("strongly convex regimes need alpha > 0")
            if self.c_override is not None:
                if self.c_override <= 0:
                    raise MissingBound("c must be positive")
                c = float(self.c_override)
            elif k_n:
                c = (2 if self.regime is Regime.DET_STRONGLY_CONVEX else 1) * self.alpha / (3 * k_n)
        object.__setattr__(self, "c", c)

    def layer_blocks(self, i: int):
        return self.blocks[i - 1]

    def all_blocks(self):
        return [b for layer in self.blocks for b in layer]


def build_context(problem: CompositionProblem, N: int, regime: Regime | None = None,
                  overrides: dict | None = None, M_L: dict | None = None) -> ScheduleContext:
    """Collect every constant the policies need for a run of ``N`` iterations.

    ``overrides`` maps a layer number (or ``(layer, block)``) to a dict with
    ``M_p``, ``M_q`` and/or ``M_qN`` (inner bound seen by the non-smooth
    block of a semi-smooth layer); the key ``"c"`` replaces the free constant
    of the strongly convex regimes.  ``problem.meta['schedule_overrides']``
    is merged in.
    """
    regime = regime or default_regime(problem)
    if regime.strongly_convex and problem.alpha <= 0:
        raise MissingBound("strongly convex regimes need alpha > 0")
    over = dict(problem.meta.get("schedule_overrides", {}))
    over.update(overrides or {})
    noise = noise_constants(problem, M_L if M_L is not None else problem.meta.get("M_L"))
    k = problem.k
    Mpi = [aggregate_bounds(layer).M_Pi for layer in problem.layers]
    blocks = []
    for i, layer in enumerate(problem.layers, start=1):
        noisy_in = problem.noisy_inputs(i)
        row = []
        for j, b in enumerate(layer.blocks()):
            sub_noisy = noisy_in if b.cols is None else noisy_in[b.cols]
            arg = ArgType.NOISY if np.any(sub_noisy) else ArgType.EXACT
            o = {**over.get(i, {}), **over.get((i, j), {})}
            row.append(BlockConstants(
                layer=i, block=j, kind=b.layer.kind, arg=arg, bounds=b.layer.bounds,
                M_p=o.get("M_p", float(np.prod(Mpi[:i - 1]))),
                M_q=o.get("M_q", float(np.prod(Mpi[i:]))),
                sigma_Lq=float(noise.sigma_lag[i + 1]), M_qN=o.get("M_qN")))
        blocks.append(tuple(row))
    return ScheduleContext(regime, int(N), problem.alpha, problem.domain.diameter, k,
                           tuple(blocks), noise, over.get("c"))


# ---------------------------------------------------------------------------
# stepsizes


def theta(t: int) -> float:
    return t / (t + 1)


def weight(t: int) -> float:
    return (t + 1) / 2


def tau(block: BlockConstants, t: int, ctx: ScheduleContext) -> float:
    """Dual stepsize of a block at iteration ``t``."""
    kind, noisy = block.kind, block.arg is ArgType.NOISY
    if kind is LayerKind.AFFINE:
        return 0.0
    if kind is LayerKind.SMOOTH:
        return t / 4 + (t + 1) / 6 if noisy else t / 2
    if kind is LayerKind.SEMISMOOTH:
        return t / 4 + (t + 1) / 6
    if kind is LayerKind.NONSMOOTH:
        if noisy:
            raise NonsmoothNoisyUnsupported(f"layer {block.layer}: non-smooth with a noisy argument")
        return 0.0
    if kind is LayerKind.SMOOTHABLE:
        D = block.bounds.D_Pi
        if D <= 0:
            raise MissingBound(f"layer {block.layer}: smoothable layers need D_Pi > 0")
        if ctx.regime.strongly_convex:
            val = 2 * block.M_p * block.M_q ** 2 / ((t + 1) * ctx.c)
        else:
            val = ctx.D_X * block.M_q / D
        if noisy:
            val += math.sqrt(ctx.N + 1) * block.sigma_Lq / (2 * D)
        return val
    raise ValueError(f"no stepsize rule for {kind}")


def H_minus(block: BlockConstants, t: int) -> float:
    if block.kind is LayerKind.SMOOTH:
        return (4 if block.arg is ArgType.NOISY else 2) * block.L_tilde / (t + 1)
    if block.kind is LayerKind.SEMISMOOTH:
        return 4 * block.LS_tilde / (t + 1)
    return 0.0


def H_plus(block: BlockConstants, ctx: ScheduleContext) -> float:
    """Constant part of ``eta`` (convex regimes only)."""
    if ctx.regime.strongly_convex:
        return 0.0
    if block.kind is LayerKind.SMOOTHABLE:
        return block.D_tilde / ctx.D_X
    if block.kind is LayerKind.NONSMOOTH:
        return math.sqrt(ctx.N + 1) * block.M_tilde / ctx.D_X
    if block.kind is LayerKind.SEMISMOOTH:
        return math.sqrt(ctx.N + 1) * block.MN_tilde / ctx.D_X
    return 0.0


def eta(t: int, ctx: ScheduleContext) -> float:
    """Primal stepsize at iteration ``t``."""
    blocks = ctx.all_blocks()
    val = sum(H_minus(b, t) for b in blocks)
    if ctx.regime.strongly_convex:
        return val + (t + 1) * ctx.alpha / 3
    val += sum(H_plus(b, ctx) for b in blocks)
    if ctx.regime is Regime.STO_CONVEX:
        val += math.sqrt(ctx.N + 1) * math.sqrt(ctx.k) * ctx.noise.sigma_Pi_tilde / (2 * ctx.D_X)
    return val


def cst(block: BlockConstants, ctx: ScheduleContext) -> float:
    """Initial-distance constant of one block for a run of ``ctx.N`` iterations."""
    N, noisy, sc = ctx.N, block.arg is ArgType.NOISY, ctx.regime.strongly_convex
    b = block.bounds
    if block.kind in (LayerKind.SMOOTH, LayerKind.SEMISMOOTH):
        L = b.L_f if block.kind is LayerKind.SMOOTH else b.L_S
        val = 0.0
        if noisy or block.kind is LayerKind.SEMISMOOTH:
            val = block.M_p * b.D_Pi ** 2 / 6 + 1.5 * N * block.M_p * L * block.sigma_Lq ** 2
        if block.kind is LayerKind.SEMISMOOTH:
            val += 2 * N / ctx.c * block.MN_tilde ** 2 if sc else \
                N * math.sqrt(N + 1) / 2 * block.MN_tilde * ctx.D_X
        return val
    if block.kind is LayerKind.SMOOTHABLE:
        val = 2 / ctx.c * block.D_tilde ** 2 if sc else N / 2 * block.D_tilde * ctx.D_X
        if noisy:
            val += N * math.sqrt(N + 1) * block.M_p * b.D_Pi * block.sigma_Lq / 2
        return val
    if block.kind is LayerKind.NONSMOOTH:
        return 2 * N / ctx.c * block.M_tilde ** 2 if sc else \
            N * math.sqrt(N + 1) / 2 * block.M_tilde * ctx.D_X
    return 0.0


def total_cst(ctx: ScheduleContext) -> float:
    return sum(cst(b, ctx) for b in ctx.all_blocks())


def distance_bound(ctx: ScheduleContext, half_dist0: float) -> float:
    """Bound on ``0.5 ||x_N - x*||^2`` given ``0.5 ||x_0 - x*||^2 <= half_dist0``.

    Strongly convex regimes only; the stochastic version bounds the mean.
    """
    if not ctx.regime.strongly_convex:
        raise ValueError("distance bounds need a strongly convex regime")
    N, a = ctx.N, ctx.alpha
    H0 = sum(H_minus(b, 0) for b in ctx.all_blocks())
    C = total_cst(ctx)
    if ctx.regime is Regime.DET_STRONGLY_CONVEX:
        return 6 * C / (a * N * (N + 3)) + 3 / (N * (N + 3)) * (H0 / a + 1 / 3) * half_dist0
    eta0 = H0 + a / 3
    return (3 * eta0 / (a * N * (N + 1)) * half_dist0 + 6 * C / (a * N * (N + 1))
            + 9 * ctx.noise.sigma_Pi_tilde ** 2 / (a ** 2 * (N + 1)))


def value_bound(ctx: ScheduleContext, half_dist0: float) -> float:
    """Bound on ``f(x_bar_N) - f*`` (mean in stochastic regimes)."""
    N = ctx.N
    blocks = ctx.all_blocks()
    C = total_cst(ctx)
    Hm0 = sum(H_minus(b, 0) for b in blocks)
    if ctx.regime.strongly_convex:
        val = 4 * C / (N * (N + 1)) + 2 / (N * (N + 1)) * (Hm0 + ctx.alpha / 3) * half_dist0
        if ctx.regime is Regime.STO_STRONGLY_CONVEX:
            val += 6 / (N + 1) * ctx.noise.sigma_Pi_tilde ** 2 / ctx.alpha
        return val
    HpT = sum(H_plus(b, ctx) for b in blocks)
    val = 4 * C / (N * (N + 1)) + 2 / (N * (N + 1)) * Hm0 * half_dist0 + 2 / (N + 1) * HpT * ctx.D_X ** 2
    if ctx.regime is Regime.STO_CONVEX:
        val += (2 * math.sqrt(N + 1) * math.sqrt(ctx.k) * ctx.D_X * ctx.noise.sigma_Pi_tilde
                + 4 * math.sqrt(N) * ctx.noise.sigma_Delta_tilde) / (N + 1)
    return val


def restart_length(problem: CompositionProblem, half_dist: float, regime: Regime | None = None,
                   factor: float = 0.5, n_max: int = 1 << 24, **ctx_kw) -> int:
    """Smallest ``N`` whose distance bound shrinks ``half_dist`` by ``factor``."""
    def ok(n):
        return distance_bound(build_context(problem, n, regime, **ctx_kw), half_dist) <= factor * half_dist
    hi = 1
    while not ok(hi):
        hi *= 2
        if hi > n_max:
            raise MissingBound("no epoch length reaches the requested contraction")
    lo = hi // 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        lo, hi = (lo, mid) if ok(mid) else (mid, hi)
    return hi


# ---------------------------------------------------------------------------
# two-layer schedule


@dataclass(frozen=True)
class TwoLayerSchedule:
    """Stepsizes and weights of the two-layer method.

    Convex: constant ``tau``, ``eta`` and unit weights.  Strongly convex:
    ``tau_t = (t + 1)/3``, ``eta_t = (t + 1) alpha/3``, ``w_t = (t + 1)/2``.
    """

    strongly_convex: bool
    alpha: float = 0.0
    tau_const: float = 0.0
    eta_const: float = 0.0

    def tau(self, t):
        return (t + 1) / 3 if self.strongly_convex else self.tau_const

    def eta(self, t):
        return (t + 1) * self.alpha / 3 if self.strongly_convex else self.eta_const

    def weight(self, t):
        return (t + 1) / 2 if self.strongly_convex else 1.0


def two_layer_schedule(problem: CompositionProblem, N: int, strongly_convex: bool | None = None,
                       D_Pi1: float | None = None) -> TwoLayerSchedule:
    """Stepsizes of the two-layer method for ``N`` iterations.

    ``D_Pi1`` bounds the outer layer's dual Bregman distance; it is needed in
    the convex regime when the inner layer's values are noisy.
    """
    if problem.k != 2:
        raise ValueError("the two-layer method needs exactly two layers")
    f1, f2 = problem.layers
    if f1.kind not in (LayerKind.SMOOTH, LayerKind.AFFINE):
        raise NonsmoothNoisyUnsupported("the two-layer method needs a smooth outer layer")
    sc = problem.alpha > 0 if strongly_convex is None else strongly_convex
    if sc:
        if problem.alpha <= 0:
            raise MissingBound("strongly convex schedule needs alpha > 0")
        return TwoLayerSchedule(True, problem.alpha)
    b1, b2 = f1.bounds, aggregate_bounds(f2)
    D_X = problem.domain.diameter
    t_const = 0.0
    if b2.sigma_f > 0:
        D = D_Pi1 if D_Pi1 is not None else b1.D_Pi
        if not D or D <= 0:
            raise MissingBound("noisy inner values need a bound D_Pi1 > 0")
        t_const = math.sqrt(N) * math.sqrt(b1.L_f) * b2.sigma_f / (math.sqrt(2) * D)
    M = b1.M_Pi * b2.M_Pi
    sig = math.sqrt(b1.sigma_pi ** 2 * b2.M_Pi ** 2 + b1.M_Pi ** 2 * b2.sigma_pi ** 2)
    e_const = math.sqrt(2 * N) * M / D_X + math.sqrt(N) * sig / (math.sqrt(2) * D_X)
    return TwoLayerSchedule(False, 0.0, t_const, e_const)
