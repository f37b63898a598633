"""Layer families with exact evaluation and stochastic first-order oracles.

Every layer exposes

* ``value(y)``: exact (expected) value, batched over leading axes of ``y``;
* ``jacobian(y)``: a consistent (sub)gradient selection of shape ``(out, in)``;
* ``query(y, rng)``: one stochastic sample ``(value, jacobian)``;
* ``blocks()``: the pieces updated by separate dual rules.

At kinks the selected subgradient is the minimum-norm element where it has a
closed form (``0`` for ``|.|`` and ``(.)_+``, uniform weights for tied maxima).
"""
from __future__ import annotations

from dataclasses import replace
from typing import NamedTuple

import numpy as np

from .core import (DimensionMismatch, DomainViolation, LayerBounds, LayerDual, LayerKind,
                   NonsmoothNoisyUnsupported, OracleSample, WrongLayerClass)


class Block(NamedTuple):
    """A piece of a layer with its own dual rule.

    ``rows``/``cols`` index the layer's output/input; ``None`` means all.
    """

    rows: np.ndarray | None
    cols: np.ndarray | None
    layer: "Layer"


def _bounds(defaults: dict, overrides: dict | None) -> LayerBounds:
    return LayerBounds(**{**defaults, **(overrides or {})})


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex along the last axis."""
    v = np.asarray(v, dtype=float)
    n = v.shape[-1]
    u = -np.sort(-v, axis=-1)
    css = np.cumsum(u, axis=-1) - 1.0
    idx = np.arange(1, n + 1)
    cond = u - css / idx > 0
    rho = n - 1 - np.argmax(cond[..., ::-1], axis=-1)
    theta = np.take_along_axis(css, rho[..., None], axis=-1) / (rho[..., None] + 1)
    return np.maximum(v - theta, 0.0)


class Layer:
    """Base class.  Subclasses set ``kind`` and implement ``value``/``jacobian``."""

    kind: LayerKind
    stochastic = False

    def __init__(self, in_dim: int, out_dim: int, bounds: LayerBounds, name: str = ""):
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)
        self.bounds = bounds
        self.name = name or type(self).__name__

    def __repr__(self):
        return f"{self.name}({self.kind.value}, {self.in_dim}->{self.out_dim})"

    def value(self, y):
        raise NotImplementedError

    def jacobian(self, y):
        raise NotImplementedError

    def query(self, y, rng: np.random.Generator) -> OracleSample:
        return OracleSample(self.value(y), self.jacobian(y))

    def dual_at(self, y) -> LayerDual:
        """Exact dual associated with ``y`` (Fenchel equality gives ``f^*``)."""
        pi = self.jacobian(y)
        return LayerDual(pi, pi @ y - self.value(y))

    def blocks(self) -> list[Block]:
        return [Block(None, None, self)]

    def noisy_rows(self, noisy_in: np.ndarray) -> np.ndarray:
        """Which outputs are random given which inputs are random."""
        return np.full(self.out_dim, bool(self.stochastic or np.any(noisy_in)))

    def check_arguments(self, noisy_in: np.ndarray, index: int) -> None:
        if self.kind is LayerKind.NONSMOOTH and np.any(noisy_in):
            raise NonsmoothNoisyUnsupported(
                f"layer {index} is non-smooth but its argument is stochastic")

    def _check_in(self, y):
        y = np.asarray(y, dtype=float)
        if y.shape[-1:] != (self.in_dim,):
            raise DimensionMismatch(f"{self.name} expects inputs of size {self.in_dim}")
        return y


# ---------------------------------------------------------------------------
# affine


class AffineLayer(Layer):
    """``f(y) = A y + b``."""

    kind = LayerKind.AFFINE

    def __init__(self, A, b=None, bounds: dict | None = None, name: str = ""):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.b = np.zeros(self.A.shape[0]) if b is None else np.asarray(b, dtype=float)
        defaults = dict(M_Pi=float(np.linalg.norm(self.A)), M_f=float(np.linalg.norm(self.b)))
        super().__init__(self.A.shape[1], self.A.shape[0], _bounds(defaults, bounds), name)

    def value(self, y):
        return self._check_in(y) @ self.A.T + self.b

    def jacobian(self, y):
        return self.A

    def noisy_rows(self, noisy_in):
        if self.stochastic:
            return np.ones(self.out_dim, dtype=bool)
        return np.any(self.A[:, noisy_in] != 0, axis=1)


# ---------------------------------------------------------------------------
# smooth


class SmoothLayer(Layer):
    """Generic smooth layer from callables.

    ``value_fn`` must accept batched inputs; ``jac_fn`` a single point.
    """

    kind = LayerKind.SMOOTH

    def __init__(self, in_dim, out_dim, value_fn, jac_fn, bounds: dict, name: str = ""):
        super().__init__(in_dim, out_dim, _bounds({}, bounds), name)
        self._value_fn, self._jac_fn = value_fn, jac_fn

    def value(self, y):
        return self._value_fn(self._check_in(y))

    def jacobian(self, y):
        return np.asarray(self._jac_fn(self._check_in(y)), dtype=float)


class SoftplusLayer(Layer):
    """``f_j(y) = w_j log(1 + exp(a_j y + b_j))`` with ``w >= 0``."""

    kind = LayerKind.SMOOTH

    def __init__(self, A, b=None, w=None, bounds: dict | None = None, name: str = ""):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        m = self.A.shape[0]
        self.b = np.zeros(m) if b is None else np.asarray(b, dtype=float)
        self.w = np.ones(m) if w is None else np.asarray(w, dtype=float)
        if np.any(self.w < 0):
            raise DomainViolation("softplus weights must be non-negative")
        rn2 = np.sum(self.A ** 2, axis=1)
        defaults = dict(M_Pi=float(np.sqrt(np.sum(self.w ** 2 * rn2))),
                        L_f=float(np.sqrt(np.sum((self.w * rn2 / 4) ** 2))))
        super().__init__(self.A.shape[1], m, _bounds(defaults, bounds), name)

    def value(self, y):
        return self.w * np.logaddexp(0.0, self._check_in(y) @ self.A.T + self.b)

    def jacobian(self, y):
        z = self.A @ self._check_in(y) + self.b
        return (self.w * _sigmoid(z))[:, None] * self.A


class SoftplusSumLayer(Layer):
    """Scalar ``f(y) = sum_j w_j log(1 + exp(a_j y + b_j))`` with ``w >= 0``."""

    kind = LayerKind.SMOOTH

    def __init__(self, A, b=None, w=None, bounds: dict | None = None, name: str = ""):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        m = self.A.shape[0]
        self.b = np.zeros(m) if b is None else np.asarray(b, dtype=float)
        self.w = np.ones(m) if w is None else np.asarray(w, dtype=float)
        if np.any(self.w < 0):
            raise DomainViolation("softplus weights must be non-negative")
        defaults = dict(M_Pi=float(np.sum(self.w * np.linalg.norm(self.A, axis=1))),
                        L_f=float(self.w.max() / 4 * np.linalg.norm(self.A, 2) ** 2))
        super().__init__(self.A.shape[1], 1, _bounds(defaults, bounds), name)

    def value(self, y):
        z = self._check_in(y) @ self.A.T + self.b
        return (np.logaddexp(0.0, z) @ self.w)[..., None]

    def jacobian(self, y):
        z = self.A @ self._check_in(y) + self.b
        return ((self.w * _sigmoid(z)) @ self.A)[None, :]


class LogSumExpLayer(Layer):
    """Scalar ``f(y) = log sum_j exp(a_j y + b_j)``."""

    kind = LayerKind.SMOOTH

    def __init__(self, A, b=None, bounds: dict | None = None, name: str = ""):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.b = np.zeros(self.A.shape[0]) if b is None else np.asarray(b, dtype=float)
        defaults = dict(M_Pi=float(np.max(np.linalg.norm(self.A, axis=1))),
                        L_f=float(np.linalg.norm(self.A, 2) ** 2))
        super().__init__(self.A.shape[1], 1, _bounds(defaults, bounds), name)

    def value(self, y):
        z = self._check_in(y) @ self.A.T + self.b
        zmax = np.max(z, axis=-1, keepdims=True)
        return zmax + np.log(np.sum(np.exp(z - zmax), axis=-1, keepdims=True))

    def jacobian(self, y):
        z = self.A @ self._check_in(y) + self.b
        p = np.exp(z - z.max())
        return (p / p.sum() @ self.A)[None, :]


class LeastSquaresLayer(Layer):
    """``f_j(y) = 0.5 ||B_j y - d_j||^2`` for ``j = 1..m``.

    ``B`` is ``(p, n)`` for a scalar layer or ``(m, p, n)`` for ``m`` rows.
    ``radius`` bounds ``||y||`` on the region of interest and sets ``M_Pi``.
    """

    kind = LayerKind.SMOOTH

    def __init__(self, B, d=None, radius: float = 1.0, bounds: dict | None = None, name: str = ""):
        B = np.asarray(B, dtype=float)
        self.B = B[None] if B.ndim == 2 else B
        m, p, n = self.B.shape
        self.d = np.zeros((m, p)) if d is None else np.asarray(d, dtype=float).reshape(m, p)
        nb = np.array([np.linalg.norm(b, 2) for b in self.B])
        reach = nb * radius + np.linalg.norm(self.d, axis=1)
        defaults = dict(M_Pi=float(np.sqrt(np.sum((nb * reach) ** 2))),
                        L_f=float(np.sqrt(np.sum(nb ** 4))),
                        M_f=float(np.sqrt(np.sum((0.5 * reach ** 2) ** 2))))
        super().__init__(n, m, _bounds(defaults, bounds), name)

    def value(self, y):
        r = np.einsum("mpn,...n->...mp", self.B, self._check_in(y)) - self.d
        return 0.5 * np.sum(r * r, axis=-1)

    def jacobian(self, y):
        r = self.B @ self._check_in(y) - self.d
        return np.einsum("mp,mpn->mn", r, self.B)


# ---------------------------------------------------------------------------
# non-smooth (implicit duals)


class NonsmoothLayer(SmoothLayer):
    """Generic non-smooth layer from callables."""

    kind = LayerKind.NONSMOOTH


class AbsLayer(Layer):
    """``f_j(y) = |a_j y + b_j|``; the subgradient at a kink is 0."""

    kind = LayerKind.NONSMOOTH

    def __init__(self, A, b=None, bounds: dict | None = None, name: str = ""):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.b = np.zeros(self.A.shape[0]) if b is None else np.asarray(b, dtype=float)
        defaults = dict(M_Pi=float(np.linalg.norm(self.A)))
        super().__init__(self.A.shape[1], self.A.shape[0], _bounds(defaults, bounds), name)

    def value(self, y):
        return np.abs(self._check_in(y) @ self.A.T + self.b)

    def jacobian(self, y):
        return np.sign(self.A @ self._check_in(y) + self.b)[:, None] * self.A


class HingeLayer(Layer):
    """``f_j(y) = max(a_j y + b_j, 0)``; the subgradient at a kink is 0."""

    kind = LayerKind.NONSMOOTH

    def __init__(self, A, b=None, bounds: dict | None = None, name: str = ""):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.b = np.zeros(self.A.shape[0]) if b is None else np.asarray(b, dtype=float)
        defaults = dict(M_Pi=float(np.linalg.norm(self.A)))
        super().__init__(self.A.shape[1], self.A.shape[0], _bounds(defaults, bounds), name)

    def value(self, y):
        return np.maximum(self._check_in(y) @ self.A.T + self.b, 0.0)

    def jacobian(self, y):
        return (self.A @ self._check_in(y) + self.b > 0)[:, None] * self.A


class SemiSmoothLayer(SmoothLayer):
    """Smooth in the ``smooth_cols`` block, non-smooth in ``nonsmooth_cols``.

    ``L_S`` is the Lipschitz constant of the smooth block's gradient and
    ``M_N`` bounds the non-smooth block's subgradients.  The non-smooth block
    must receive exact arguments.
    """

    kind = LayerKind.SEMISMOOTH

    def __init__(self, in_dim, out_dim, value_fn, jac_fn, smooth_cols, nonsmooth_cols,
                 bounds: dict, name: str = ""):
        super().__init__(in_dim, out_dim, value_fn, jac_fn, bounds, name)
        self.smooth_cols = np.asarray(smooth_cols, dtype=int)
        self.nonsmooth_cols = np.asarray(nonsmooth_cols, dtype=int)

    def check_arguments(self, noisy_in, index):
        if np.any(noisy_in[self.nonsmooth_cols]):
            raise NonsmoothNoisyUnsupported(
                f"layer {index}: the non-smooth block of a semi-smooth layer needs exact inputs")


# ---------------------------------------------------------------------------
# smoothable (explicit duals)


class SmoothableLayer(Layer):
    """``f_j(y) = max_{pi in Pi_j} pi (y + c_j) - gamma/2 ||pi||^2``.

    Duals are kept explicitly, one row per output.  The dual prox uses the
    row-wise distance ``sqrt(m)/2 ||pi_j - pi'_j||^2``; the ``sqrt(m)`` factor
    makes the weighted three-point inequality hold for any non-negative
    weights.
    """

    kind = LayerKind.SMOOTHABLE

    def __init__(self, in_dim, out_dim, gamma, offset, bounds, name):
        self.gamma = float(gamma)
        if self.gamma < 0:
            raise DomainViolation("gamma must be >= 0")
        self.C = np.zeros((out_dim, in_dim)) if offset is None else np.asarray(offset, dtype=float)
        if self.C.shape != (out_dim, in_dim):
            raise DimensionMismatch("offset must have shape (out, in)")
        super().__init__(in_dim, out_dim, bounds, name)

    # subclasses: project(pi), argmax(z) with z of shape (..., m, n), row_diam_sq()

    def initial_dual(self) -> np.ndarray:
        return self.project(np.zeros((self.out_dim, self.in_dim)))

    def value(self, y):
        z = self._check_in(y)[..., None, :] + self.C
        p = self.argmax(z)
        return np.sum(p * z - 0.5 * self.gamma * p * p, axis=-1)

    def jacobian(self, y):
        return self.argmax(self._check_in(y)[None, :] + self.C)

    def conj_value(self, pi) -> np.ndarray:
        pi = np.asarray(pi, dtype=float)
        if not np.allclose(self.project(pi), pi, atol=1e-9, rtol=0):
            raise DomainViolation("dual point outside the conjugate's domain")
        return np.sum(0.5 * self.gamma * pi * pi - pi * self.C, axis=-1)

    def dual_at(self, y) -> LayerDual:
        pi = self.jacobian(y)
        return LayerDual(pi, self.conj_value(pi))

    def conj_prox(self, y_tilde, pi_prev, tau) -> np.ndarray:
        """Row-wise ``argmin -pi y~ + f^*(pi) + tau/2 ||pi - pi_prev||^2``."""
        if tau < 0:
            raise DomainViolation("tau must be >= 0")
        den = self.gamma + tau
        if den == 0:
            return self.jacobian(y_tilde)
        return self.project((np.asarray(y_tilde)[None, :] + self.C + tau * pi_prev) / den)

    def dual_step(self, y_tilde, pi_prev, tau) -> np.ndarray:
        """Prox step in the scaled row distance used by the analysis."""
        return self.conj_prox(y_tilde, pi_prev, tau * np.sqrt(self.out_dim))

    def bregman(self, p1, p2) -> np.ndarray:
        return 0.5 * np.sqrt(self.out_dim) * np.sum((np.asarray(p1) - p2) ** 2, axis=-1)

    def _default_bounds(self, max_norm_sq) -> dict:
        d4 = np.sum(self.row_diam_sq() ** 2)
        return dict(M_Pi=float(np.sqrt(max_norm_sq)),
                    D_Pi=float(np.sqrt(0.5 * np.sqrt(self.out_dim) * np.sqrt(d4))),
                    L_f=1.0 / self.gamma if self.gamma > 0 else 0.0)


class BoxSmoothable(SmoothableLayer):
    """Rows with box dual domains ``lo_j <= pi_j <= hi_j`` (entry-wise).

    Entries with ``lo == hi == 0`` do not take part in that row, so this
    covers ``||.||_1`` of a block, ``|.|``, ``(.)_+`` and their Huber-type
    smoothings (``gamma > 0``).
    """

    def __init__(self, lo, hi, gamma=0.0, offset=None, bounds: dict | None = None, name: str = ""):
        self.lo = np.atleast_2d(np.asarray(lo, dtype=float))
        self.hi = np.atleast_2d(np.asarray(hi, dtype=float))
        if self.lo.shape != self.hi.shape or np.any(self.lo > self.hi):
            raise DomainViolation("need lo <= hi of equal shape")
        m, n = self.lo.shape
        super().__init__(n, m, gamma, offset, LayerBounds(), name)
        mx = np.maximum(self.lo ** 2, self.hi ** 2)
        self.bounds = _bounds(self._default_bounds(np.sum(mx)), bounds)

    def project(self, pi):
        return np.clip(pi, self.lo, self.hi)

    def argmax(self, z):
        if self.gamma > 0:
            return np.clip(z / self.gamma, self.lo, self.hi)
        zero = np.clip(0.0, self.lo, self.hi)
        return np.where(z > 0, self.hi, np.where(z < 0, self.lo, zero))

    def row_diam_sq(self):
        return np.sum((self.hi - self.lo) ** 2, axis=1)


class SimplexSmoothable(SmoothableLayer):
    """Scalar ``f(y) = max_j (y_j + c_j)`` (``gamma = 0``) or its smoothing."""

    def __init__(self, in_dim, gamma=0.0, offset=None, bounds: dict | None = None, name: str = ""):
        offset = None if offset is None else np.asarray(offset, dtype=float).reshape(1, in_dim)
        super().__init__(in_dim, 1, gamma, offset, LayerBounds(), name)
        self.bounds = _bounds(self._default_bounds(1.0), bounds)

    def project(self, pi):
        return project_simplex(pi)

    def argmax(self, z):
        if self.gamma > 0:
            return project_simplex(z / self.gamma)
        top = z == np.max(z, axis=-1, keepdims=True)
        return top / np.sum(top, axis=-1, keepdims=True)

    def row_diam_sq(self):
        return np.array([2.0])


# ---------------------------------------------------------------------------
# stochastic wrappers


class GaussianNoise(Layer):
    """Adds independent centred Gaussian noise to value and Jacobian samples.

    Exact evaluation is that of the wrapped layer.  ``rows`` restricts the
    noise to some outputs (default all).
    """

    stochastic = True

    def __init__(self, base: Layer, value_std: float = 0.0, jac_std: float = 0.0,
                 rows=None, bounds: dict | None = None, name: str = ""):
        if not base.kind.implicit:
            raise WrongLayerClass("only layers with implicit duals can be stochastic")
        self.base = base
        self.kind = base.kind
        self.mask = np.ones(base.out_dim, bool) if rows is None else np.zeros(base.out_dim, bool)
        if rows is not None:
            self.mask[np.asarray(rows)] = True
        self.value_std, self.jac_std = float(value_std), float(jac_std)
        r = int(self.mask.sum())
        sf = self.value_std * np.sqrt(r)
        sp = self.jac_std * np.sqrt(r * base.in_dim)
        defaults = dict(base.bounds.__dict__)
        defaults.update(sigma_f=float(np.hypot(base.bounds.sigma_f, sf)),
                        sigma_pi=float(np.hypot(base.bounds.sigma_pi, sp)),
                        M_Pi=float(np.hypot(base.bounds.M_Pi, sp)))
        super().__init__(base.in_dim, base.out_dim, _bounds(defaults, bounds),
                         name or f"noisy {base.name}")
        for attr in ("smooth_cols", "nonsmooth_cols"):
            if hasattr(base, attr):
                setattr(self, attr, getattr(base, attr))

    def value(self, y):
        return self.base.value(y)

    def jacobian(self, y):
        return self.base.jacobian(y)

    def query(self, y, rng):
        v, J = self.base.query(y, rng)
        v = v + self.mask * (self.value_std * rng.standard_normal(self.out_dim))
        J = J + self.mask[:, None] * (self.jac_std * rng.standard_normal(J.shape))
        return OracleSample(v, J)

    def noisy_rows(self, noisy_in):
        return self.base.noisy_rows(noisy_in) | self.mask

    def check_arguments(self, noisy_in, index):
        self.base.check_arguments(noisy_in, index)


class ScenarioLayer(Layer):
    """Expectation over a finite scenario set, sampled by drawing a scenario.

    Parameters
    ----------
    scenarios : list of Layer
        Deterministic layers of one class and equal dimensions.
    probs : array
        Scenario probabilities (must sum to 1).
    bounds : dict
        Constants for the expectation; for affine scenarios they are computed
        from ``input_radius``.
    """

    stochastic = True

    def __init__(self, scenarios, probs, bounds: dict | None = None, input_radius: float = 1.0,
                 varying_rows=None, name: str = ""):
        self.scenarios = list(scenarios)
        self.probs = np.asarray(probs, dtype=float)
        if len(self.scenarios) != self.probs.size or self.probs.size == 0:
            raise DimensionMismatch("need one probability per scenario")
        if np.any(self.probs < 0) or abs(self.probs.sum() - 1.0) > 1e-9:
            raise DomainViolation("scenario probabilities must be >= 0 and sum to 1")
        first = self.scenarios[0]
        for s in self.scenarios:
            if (s.kind, s.in_dim, s.out_dim) != (first.kind, first.in_dim, first.out_dim):
                raise DimensionMismatch("scenarios must share class and dimensions")
            if not s.kind.implicit:
                raise WrongLayerClass("only layers with implicit duals can be stochastic")
        self.kind = first.kind
        self._cum = np.cumsum(self.probs)
        self._cum[-1] = 1.0
        defaults = {}
        if self.kind is LayerKind.AFFINE:
            A = np.array([s.A for s in self.scenarios])
            b = np.array([s.b for s in self.scenarios])
            dA = A - np.tensordot(self.probs, A, 1)
            db = b - self.probs @ b
            nA = np.linalg.norm(dA, axis=(1, 2))
            defaults = dict(
                M_Pi=float(np.sqrt(self.probs @ np.sum(A ** 2, axis=(1, 2)))),
                sigma_pi=float(np.sqrt(self.probs @ nA ** 2)),
                sigma_f=float(np.sqrt(self.probs @ (nA * input_radius + np.linalg.norm(db, axis=1)) ** 2)),
                M_f=float(np.linalg.norm(self.probs @ b)))
            if varying_rows is None:
                varying_rows = np.any(dA != 0, axis=(0, 2)) | np.any(db != 0, axis=0)
        self.varying = (np.ones(first.out_dim, bool) if varying_rows is None
                        else np.asarray(varying_rows, dtype=bool))
        super().__init__(first.in_dim, first.out_dim, _bounds(defaults, bounds), name or "scenarios")

    @property
    def A(self):
        return sum(p * s.A for p, s in zip(self.probs, self.scenarios))

    def value(self, y):
        return sum(p * s.value(y) for p, s in zip(self.probs, self.scenarios))

    def jacobian(self, y):
        return sum(p * s.jacobian(y) for p, s in zip(self.probs, self.scenarios))

    def draw(self, rng) -> int:
        return int(np.searchsorted(self._cum, rng.random(), side="right"))

    def query(self, y, rng):
        s = self.scenarios[min(self.draw(rng), len(self.scenarios) - 1)]
        return OracleSample(s.value(y), s.jacobian(y))

    def noisy_rows(self, noisy_in):
        inner = np.zeros(self.out_dim, dtype=bool)
        for s in self.scenarios:
            inner |= s.noisy_rows(noisy_in)
        return inner | self.varying

    def check_arguments(self, noisy_in, index):
        self.scenarios[0].check_arguments(noisy_in, index)


# ---------------------------------------------------------------------------
# separable mixtures


class MixtureLayer(Layer):
    """Separable mixture of layers of different classes.

    ``mode="rows"`` stacks outputs of layers sharing the input (each part is
    ``(output indices, layer)``).  ``mode="cols"`` sums layers applied to
    disjoint input blocks (each part is ``(input indices, layer)``).  Each part
    keeps its own dual rule.
    """

    kind = LayerKind.MIXTURE

    def __init__(self, parts, mode: str, in_dim: int | None = None, out_dim: int | None = None,
                 name: str = ""):
        if mode not in ("rows", "cols"):
            raise ValueError("mode must be 'rows' or 'cols'")
        self.mode = mode
        self.parts = [(np.asarray(idx, dtype=int), layer) for idx, layer in parts]
        for _, layer in self.parts:
            if layer.kind is LayerKind.MIXTURE:
                raise WrongLayerClass("mixtures cannot be nested")
        allidx = np.concatenate([idx for idx, _ in self.parts])
        if mode == "rows":
            out_dim = allidx.size if out_dim is None else out_dim
            in_dim = self.parts[0][1].in_dim
            ok = all(layer.in_dim == in_dim and layer.out_dim == idx.size for idx, layer in self.parts)
        else:
            in_dim = allidx.size if in_dim is None else in_dim
            out_dim = self.parts[0][1].out_dim
            ok = all(layer.out_dim == out_dim and layer.in_dim == idx.size for idx, layer in self.parts)
        total = out_dim if mode == "rows" else in_dim
        if not ok or np.unique(allidx).size != allidx.size or allidx.size != total:
            raise DimensionMismatch("mixture parts must partition the rows/columns")
        self.stochastic = any(layer.stochastic for _, layer in self.parts)
        super().__init__(in_dim, out_dim, LayerBounds(), name or f"{mode} mixture")

    def value(self, y):
        y = self._check_in(y)
        if self.mode == "rows":
            out = np.empty(y.shape[:-1] + (self.out_dim,))
            for idx, layer in self.parts:
                out[..., idx] = layer.value(y)
            return out
        return sum(layer.value(y[..., idx]) for idx, layer in self.parts)

    def jacobian(self, y):
        J = np.zeros((self.out_dim, self.in_dim))
        for idx, layer in self.parts:
            if self.mode == "rows":
                J[idx] = layer.jacobian(y)
            else:
                J[:, idx] = layer.jacobian(y[idx])
        return J

    def dual_at(self, y):
        pi = np.zeros((self.out_dim, self.in_dim))
        fstar = np.zeros(self.out_dim)
        for b in self.blocks():
            sub = b.layer.dual_at(y if b.cols is None else y[b.cols])
            place(pi, fstar, b, sub.pi, sub.fstar)
        return LayerDual(pi, fstar)

    def query(self, y, rng):
        v = np.zeros(self.out_dim)
        J = np.zeros((self.out_dim, self.in_dim))
        for b in self.blocks():
            sv, sJ = b.layer.query(y if b.cols is None else y[b.cols], rng)
            place(J, v, b, sJ, sv)
        return OracleSample(v, J)

    def blocks(self):
        if self.mode == "rows":
            return [Block(idx, None, layer) for idx, layer in self.parts]
        return [Block(None, idx, layer) for idx, layer in self.parts]

    def noisy_rows(self, noisy_in):
        if self.mode == "rows":
            out = np.zeros(self.out_dim, dtype=bool)
            for idx, layer in self.parts:
                out[idx] = layer.noisy_rows(noisy_in)
            return out
        out = np.zeros(self.out_dim, dtype=bool)
        for idx, layer in self.parts:
            out |= layer.noisy_rows(noisy_in[idx])
        return out

    def check_arguments(self, noisy_in, index):
        for b in self.blocks():
            b.layer.check_arguments(noisy_in if b.cols is None else noisy_in[b.cols], index)


def place(pi, fstar, block: Block, sub_pi, sub_fstar) -> None:
    """Write a block's dual into the layer's dual (in place)."""
    if block.rows is None and block.cols is None:
        pi[...] = sub_pi
        fstar[...] = sub_fstar
    elif block.cols is None:
        pi[block.rows] = sub_pi
        fstar[block.rows] = sub_fstar
    else:
        pi[:, block.cols] = sub_pi
        fstar += sub_fstar


def with_bounds(layer: Layer, **overrides) -> Layer:
    """Return the layer with some bounds replaced (the layer is modified)."""
    layer.bounds = replace(layer.bounds, **overrides)
    return layer
