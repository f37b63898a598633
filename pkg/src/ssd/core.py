"""Core types for nested compositions and their Lagrangian reformulation.

A problem is ``min_{x in X} f_1(f_2(...f_k(x))) + u(x)``, where ``f_1`` is
scalar valued.  Layer ``i`` receives the output of layer ``i + 1`` and the
innermost layer receives ``x``.  Layers are indexed from 1 (outermost) to
``k`` (innermost) in public functions.  Python lists hold them at ``i - 1``.

Each layer ``f_i`` is replaced by ``max_{pi in Pi_i} pi y - f_i^*(pi)``, which
turns the problem into a saddle point problem in ``(x, pi_1, ..., pi_k)``:

    L_{k+1}(x) = x,   L_i(x, pi_{i:}) = pi_i L_{i+1}(x, pi_{i+1:}) - f_i^*(pi_i),

and the full Lagrangian is ``L_1 + u(x)``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np


# ---------------------------------------------------------------------------
# errors


class SSDError(Exception):
    """Base class of all package errors."""


class DimensionMismatch(SSDError, ValueError):
    pass


class DomainViolation(SSDError, ValueError):
    pass


class WrongLayerClass(SSDError, TypeError):
    pass


class UnsupportedExactEval(SSDError):
    pass


class MissingBound(SSDError, ValueError):
    pass


class MissingSample(SSDError, KeyError):
    pass


class NonsmoothNoisyUnsupported(SSDError, ValueError):
    """A non-smooth layer would receive a stochastic argument."""


class AssumptionViolation(SSDError, ValueError):
    pass


class NoConvergenceCertificate(SSDError, RuntimeError):
    pass


class SolverDiverged(SSDError, FloatingPointError):
    pass


# ---------------------------------------------------------------------------
# enums and bounds


class LayerKind(enum.Enum):
    AFFINE = "affine"
    SMOOTH = "smooth"
    SMOOTHABLE = "smoothable"
    NONSMOOTH = "nonsmooth"
    SEMISMOOTH = "semismooth"
    MIXTURE = "mixture"

    @property
    def implicit(self) -> bool:
        """Duals are represented through an associated primal point."""
        return self in (LayerKind.AFFINE, LayerKind.SMOOTH,
                        LayerKind.NONSMOOTH, LayerKind.SEMISMOOTH)


class ArgType(enum.Enum):
    EXACT = "exact"
    NOISY = "noisy"


@dataclass(frozen=True)
class LayerBounds:
    """Problem constants attached to one layer (or one mixture block).

    ``M_Pi`` bounds ``sqrt(E ||f'(y, xi)||^2)`` and ``sigma_f``/``sigma_pi``
    bound the standard deviations of value and Jacobian samples.  All matrix
    norms are Frobenius norms, which dominate the operator norm, so every
    derived constant stays a valid upper bound.  ``M_f`` bounds the layer's
    value on the relevant region and feeds the default Lagrangian bound.
    """

    M_Pi: float = 0.0
    L_f: float = 0.0
    D_Pi: float = 0.0
    sigma_f: float = 0.0
    sigma_pi: float = 0.0
    M_f: float = 0.0
    M_L: float | None = None
    L_S: float = 0.0
    M_N: float = 0.0

    def __post_init__(self):
        for name in ("M_Pi", "L_f", "D_Pi", "sigma_f", "sigma_pi", "M_f", "L_S", "M_N"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise MissingBound(f"bound {name} must be finite and >= 0, got {v}")


class OracleSample(NamedTuple):
    value: np.ndarray
    jacobian: np.ndarray


@dataclass
class DualSample:
    """One draw of a dual stochastic oracle.

    Satisfies ``fstar == pi @ anchor - value`` when the sample was produced at
    an associated point ``anchor``.  Keeping the anchor lets the Lagrangian be
    evaluated as ``pi @ (y - anchor) + value``, which avoids cancellation.
    """

    pi: np.ndarray
    fstar: np.ndarray
    tag: int
    anchor: np.ndarray | None = None
    value: np.ndarray | None = None

    def apply(self, y: np.ndarray) -> np.ndarray:
        """Return ``pi y - f^*``."""
        if self.anchor is not None:
            return self.pi @ (y - self.anchor) + self.value
        return self.pi @ y - self.fstar


class LayerDual(NamedTuple):
    """An exact dual point ``(pi, f^*(pi))`` of a layer."""

    pi: np.ndarray
    fstar: np.ndarray


# ---------------------------------------------------------------------------
# feasible sets and the regularizer


class Ball:
    """Euclidean ball ``{x : ||x - center|| <= radius}``."""

    def __init__(self, center, radius: float):
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        if self.radius <= 0:
            raise DomainViolation("ball radius must be positive")

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def diameter(self) -> float:
        # D_X with D_X^2 = max 0.5 ||x - x'||^2
        return np.sqrt(2.0) * self.radius

    @property
    def max_norm(self) -> float:
        return float(np.linalg.norm(self.center) + self.radius)

    def project(self, x: np.ndarray) -> np.ndarray:
        d = x - self.center
        n = np.linalg.norm(d)
        if n <= self.radius:
            return x
        return self.center + d * (self.radius / n)

    def contains(self, x, tol: float = 1e-12) -> bool:
        return bool(np.linalg.norm(np.asarray(x) - self.center) <= self.radius + tol)


class Box:
    """Axis aligned box ``{x : lo <= x <= hi}``."""

    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        if self.lo.shape != self.hi.shape or np.any(self.lo > self.hi):
            raise DomainViolation("box needs lo <= hi of equal shape")

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo) / np.sqrt(2.0))

    @property
    def max_norm(self) -> float:
        return float(np.linalg.norm(np.maximum(np.abs(self.lo), np.abs(self.hi))))

    def project(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lo, self.hi)

    def contains(self, x, tol: float = 1e-12) -> bool:
        x = np.asarray(x)
        return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))


@dataclass
class Regularizer:
    """``u(x) = alpha/2 ||x - center||^2 + <linear, x>``."""

    alpha: float = 0.0
    center: np.ndarray | None = None
    linear: np.ndarray | None = None

    def __post_init__(self):
        if self.alpha < 0:
            raise DomainViolation("alpha must be >= 0")

    def value(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1])
        if self.alpha:
            d = x - (0.0 if self.center is None else self.center)
            out = out + 0.5 * self.alpha * np.sum(d * d, axis=-1)
        if self.linear is not None:
            out = out + x @ self.linear
        return out

    def gradient(self, x: np.ndarray) -> np.ndarray:
        g = np.zeros_like(x, dtype=float)
        if self.alpha:
            g = g + self.alpha * (x - (0.0 if self.center is None else self.center))
        if self.linear is not None:
            g = g + self.linear
        return g

    def prox_step(self, x: np.ndarray, g: np.ndarray, eta: float, domain) -> np.ndarray:
        """``argmin_{z in X} <g, z> + u(z) + eta/2 ||z - x||^2``."""
        num = eta * x - g
        if self.alpha and self.center is not None:
            num = num + self.alpha * self.center
        if self.linear is not None:
            num = num - self.linear
        # isotropic quadratic, so projecting the free minimizer is exact
        return domain.project(num / (eta + self.alpha))


# ---------------------------------------------------------------------------
# problems


@dataclass
class CompositionProblem:
    """``min_{x in X} f_1 o ... o f_k (x) + u(x)``.

    Parameters
    ----------
    layers : sequence of Layer
        Outermost first.  ``layers[0]`` must be scalar valued.
    domain : Ball or Box
    reg : Regularizer
    x0 : array
        Starting point (projected onto the domain).
    optimum : tuple, optional
        Known ``(x_star, f_star)`` when the optimum is planted by construction.
    """

    layers: Sequence
    domain: object
    reg: Regularizer = field(default_factory=Regularizer)
    x0: np.ndarray | None = None
    name: str = "problem"
    optimum: tuple | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.layers = list(self.layers)
        if not self.layers:
            raise DimensionMismatch("need at least one layer")
        if self.layers[0].out_dim != 1:
            raise DimensionMismatch("outermost layer must be scalar valued")
        for i in range(len(self.layers) - 1):
            if self.layers[i].in_dim != self.layers[i + 1].out_dim:
                raise DimensionMismatch(
                    f"layer {i + 1} expects {self.layers[i].in_dim} inputs, "
                    f"layer {i + 2} outputs {self.layers[i + 1].out_dim}")
        if self.layers[-1].in_dim != self.domain.dim:
            raise DimensionMismatch("innermost layer does not match dim(X)")
        self.x0 = self.domain.project(
            np.zeros(self.dim) if self.x0 is None else np.asarray(self.x0, dtype=float))
        if self.reg.center is not None and self.reg.center.shape != (self.dim,):
            raise DimensionMismatch("regularizer center has the wrong shape")
        self._noisy_in = self._propagate_noise()
        for i, layer in enumerate(self.layers):
            layer.check_arguments(self._noisy_in[i], i + 1)

    @property
    def k(self) -> int:
        return len(self.layers)

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def alpha(self) -> float:
        return self.reg.alpha

    @property
    def stochastic(self) -> bool:
        return any(layer.stochastic for layer in self.layers)

    def _propagate_noise(self) -> list[np.ndarray]:
        noisy = np.zeros(self.dim, dtype=bool)
        out = [None] * self.k
        for i in range(self.k - 1, -1, -1):
            out[i] = noisy
            noisy = self.layers[i].noisy_rows(noisy)
        return out

    def noisy_inputs(self, i: int) -> np.ndarray:
        """Boolean mask of the stochastic entries of layer ``i``'s argument."""
        return self._noisy_in[i - 1]

    def nested_values(self, x: np.ndarray) -> list[np.ndarray]:
        """``[f_{1:}(x), f_{2:}(x), ..., f_{k:}(x), x]`` (exact)."""
        vals = [np.asarray(x, dtype=float)]
        for layer in reversed(self.layers):
            vals.append(layer.value(vals[-1]))
        return vals[::-1]

    def f(self, x: np.ndarray) -> np.ndarray:
        """Composition value, batched over leading axes of ``x``."""
        y = np.asarray(x, dtype=float)
        for layer in reversed(self.layers):
            y = layer.value(y)
        return y[..., 0]

    def objective(self, x: np.ndarray) -> np.ndarray:
        return self.f(x) + self.reg.value(np.asarray(x, dtype=float))

    def exact_duals(self, x: np.ndarray) -> list[LayerDual]:
        """Exact duals ``pi_i = f_i'(f_{i+1:}(x))`` (the strong duality point)."""
        vals = self.nested_values(x)
        return [layer.dual_at(vals[i + 1]) for i, layer in enumerate(self.layers)]

    def subgradient(self, x: np.ndarray) -> np.ndarray:
        """A subgradient of ``f + u`` at ``x`` by the chain rule."""
        duals = self.exact_duals(x)
        return chain(d.pi for d in duals)[0] + self.reg.gradient(np.asarray(x, dtype=float))


def eval_composition(problem: CompositionProblem, x) -> float:
    """Exact objective ``f(x) + u(x)``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (problem.dim,):
        raise DimensionMismatch(f"x must have shape ({problem.dim},)")
    return float(problem.objective(x))


def chain(mats) -> np.ndarray:
    """Left-to-right matrix product ``pi_i pi_{i+1} ...``."""
    out = None
    for m in mats:
        out = m if out is None else out @ m
    return out


# ---------------------------------------------------------------------------
# Lagrangians


def lagrangian_value(duals: Sequence, x: np.ndarray, start: int = 1) -> np.ndarray:
    """``L_start(x, pi_{start:})`` for exact duals or dual samples.

    ``duals`` lists one entry per layer ``start..k`` (outermost first); an entry
    is a :class:`LayerDual` or a :class:`DualSample`.
    """
    y = np.asarray(x, dtype=float)
    for d in reversed(list(duals)):
        y = d.apply(y) if isinstance(d, DualSample) else d.pi @ y - d.fstar
    return y


def lagrangian(problem: CompositionProblem, x, duals: Sequence[LayerDual]) -> float:
    """Full Lagrangian ``L(x; pi) = L_1(x, pi) + u(x)``."""
    if len(duals) != problem.k:
        raise DimensionMismatch("need one dual per layer")
    x = np.asarray(x, dtype=float)
    return float(lagrangian_value(duals, x)[0] + problem.reg.value(x))


def stochastic_lagrangian(samples: Sequence[DualSample], x) -> np.ndarray:
    """``L_i(x, pi_{i:}(xi))`` from one dual sample per layer ``i..k``."""
    for s in samples:
        if not isinstance(s, DualSample):
            raise MissingSample("expected DualSample entries")
    return lagrangian_value(samples, x)


def gap_Q(problem: CompositionProblem, candidate, reference) -> float:
    """``Q(z_bar, z) = L(x_bar; pi_ref) - L(x_ref; pi_bar)``.

    ``candidate`` and ``reference`` are ``(x, duals)`` pairs with one exact
    :class:`LayerDual` per layer.
    """
    x_bar, pi_bar = candidate
    x_ref, pi_ref = reference
    for pis in (pi_bar, pi_ref):
        for i, (d, layer) in enumerate(zip(pis, problem.layers)):
            if d.pi.shape != (layer.out_dim, layer.in_dim):
                raise DimensionMismatch(f"dual {i + 1} has shape {d.pi.shape}")
    return lagrangian(problem, x_bar, pi_ref) - lagrangian(problem, x_ref, pi_bar)


def ergodic_average(iterates, weights) -> np.ndarray:
    """Weighted average ``sum w_t z_t / sum w_t``."""
    iterates = np.asarray(iterates, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if iterates.shape[0] != weights.shape[0] or iterates.shape[0] == 0:
        raise DimensionMismatch("need one weight per iterate")
    if np.any(weights < 0) or weights.sum() <= 0:
        raise DomainViolation("weights must be non-negative with positive sum")
    return np.tensordot(weights, iterates, axes=1) / weights.sum()


def weighted_bregman_check(layer, p1, p2, w) -> tuple[float, float]:
    """Both sides of the weighted three-point inequality ``lhs >= rhs``.

    For implicit smooth layers ``p1, p2`` are associated points and the
    Bregman distance is that of ``f^*``; the right side is
    ``||w (pi_1 - pi_2)||^2 / (2 L)``.  For smoothable layers ``p1, p2`` are
    dual matrices and the distance is the row-wise scaled squared norm used
    by the dual prox step.
    """
    w = np.asarray(w, dtype=float)
    if np.any(w < 0):
        raise DomainViolation("weights must be non-negative")
    if layer.kind is LayerKind.SMOOTH:
        if layer.bounds.L_f <= 0:
            raise MissingBound("smooth layer needs L_f > 0")
        pi1, pi2 = layer.jacobian(p1), layer.jacobian(p2)
        # D_{f*}(pi1, pi2) row-wise, written through the associated points
        breg = layer.value(p1) - layer.value(p2) - pi2 @ (p1 - p2)
        lhs = np.linalg.norm(w) * float(w @ breg)
        rhs = float(np.sum((w @ (pi1 - pi2)) ** 2)) / (2 * layer.bounds.L_f)
        return lhs, rhs
    if layer.kind is LayerKind.SMOOTHABLE:
        lhs = np.linalg.norm(w) * float(w @ layer.bregman(p1, p2))
        rhs = float(np.sum((w @ (p1 - p2)) ** 2)) / 2
        return lhs, rhs
    raise WrongLayerClass(f"no three-point inequality for {layer.kind.value} layers")
