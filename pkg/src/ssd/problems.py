"""Problem families: synthetic stacks, benchmarks, risk-averse and composite problems.

Synthetic problems plant their optimum: the point ``x*`` is fixed first,
then the linear part of ``u`` is set to minus a subgradient of ``f`` at
``x*``, so ``0`` is in the subdifferential of the objective there and
``f*`` is known exactly.
"""
from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from .core import (Ball, Box, CompositionProblem, DomainViolation, LayerKind, Regularizer,
                   WrongLayerClass, chain)
from .layers import (AbsLayer, AffineLayer, BoxSmoothable, GaussianNoise, HingeLayer,
                     LeastSquaresLayer, MixtureLayer, NonsmoothLayer, ScenarioLayer,
                     SemiSmoothLayer, SimplexSmoothable, SoftplusLayer, SoftplusSumLayer)

LAYER_KINDS = ("affine", "smooth", "smoothable", "nonsmooth")


# ---------------------------------------------------------------------------
# planting


def plant_optimum(layers, domain, x_star, alpha: float = 0.0, name: str = "planted",
                  x0=None, meta: dict | None = None) -> CompositionProblem:
    """Build a problem whose minimizer is ``x_star`` (interior of the domain).

    With ``alpha > 0`` the regularizer is centred at ``x_star``; in all cases
    its linear part cancels a subgradient of ``f`` at ``x_star``.
    """
    x_star = np.asarray(x_star, dtype=float)
    if not domain.contains(x_star):
        raise DomainViolation("planted optimum must lie in the domain")
    probe = CompositionProblem(layers, domain, Regularizer(), x0=x0)
    g = chain(d.pi for d in probe.exact_duals(x_star))[0]
    reg = Regularizer(alpha, x_star.copy() if alpha > 0 else None, -g)
    p = CompositionProblem(layers, domain, reg, x0=x0, name=name, meta=dict(meta or {}))
    p.optimum = (x_star, float(p.objective(x_star)))
    return p


def _interior_point(domain, rng, frac=0.4):
    if isinstance(domain, Ball):
        u = rng.normal(size=domain.dim)
        return domain.center + frac * domain.radius * u / np.linalg.norm(u)
    mid = 0.5 * (domain.lo + domain.hi)
    return mid + frac * 0.5 * (domain.hi - domain.lo) * rng.uniform(-1, 1, domain.dim)


def make_layer(kind: str, in_dim: int, out_dim: int, rng: np.random.Generator,
               monotone: bool, point=None, kinks: bool = True, gamma: float = 0.0):
    """Random layer of a given class.

    ``monotone`` asks for non-negative Jacobians (needed when a non-affine
    layer sits inside).  ``point`` is the layer's argument at the planted
    optimum; with ``kinks`` some rows are made non-differentiable there.
    """
    pos = lambda *s: rng.uniform(0.2, 1.0, s) / np.sqrt(in_dim)
    gen = lambda *s: rng.normal(size=s) / np.sqrt(in_dim)
    A = pos(out_dim, in_dim) if monotone else gen(out_dim, in_dim)
    b = 0.5 * rng.normal(size=out_dim)
    y = np.zeros(in_dim) if point is None else np.asarray(point, dtype=float)
    n_kink = (out_dim + 1) // 2 if kinks else 0
    if kind == "affine":
        return AffineLayer(A, b)
    if kind == "smooth":
        if out_dim == 1:
            m = max(2, in_dim)
            Am = pos(m, in_dim) if monotone else gen(m, in_dim)
            return SoftplusSumLayer(Am, 0.5 * rng.normal(size=m))
        return SoftplusLayer(A, b)
    if kind == "nonsmooth":
        b[:n_kink] = -A[:n_kink] @ y
        return HingeLayer(A, b) if monotone else AbsLayer(A, b)
    if kind == "smoothable":
        lo, hi = np.zeros((out_dim, in_dim)), np.zeros((out_dim, in_dim))
        C = np.zeros((out_dim, in_dim))
        for l in range(in_dim):
            j = l % out_dim
            lo[j, l], hi[j, l] = (0.0, 1.0) if monotone else (-1.0, 1.0)
            C[j, l] = -y[l] if j < n_kink else 0.5 * rng.normal()
        if in_dim < out_dim:
            raise DomainViolation("smoothable rows need in_dim >= out_dim")
        return BoxSmoothable(lo, hi, gamma=gamma, offset=C)
    raise ValueError(f"unknown layer kind {kind!r}")


def make_synthetic_stack(kinds, dims=None, n: int = 2, seed: int = 0, alpha: float = 0.0,
                         stochastic=(), noise: float = 0.1, radius: float = 1.0,
                         kinks: bool = True, gamma: float = 0.0, name: str = "") -> CompositionProblem:
    """Random composition with a planted optimum.

    Parameters
    ----------
    kinds : sequence of str
        Layer classes, outermost first (``affine``, ``smooth``, ``smoothable``,
        ``nonsmooth``).
    dims : sequence of int, optional
        Output sizes, outermost first (``dims[0] == 1``).  Defaults to 1 then
        ``n`` for the inner layers.
    n : int
        Dimension of ``x``; the domain is the ball of ``radius`` at 0.
    stochastic : collection of int
        Layer numbers (1 = outermost) given Gaussian oracle noise of std
        ``noise``.  Non-smooth and smoothable layers may only be stochastic
        when no stochastic layer lies inside them.
    """
    kinds = [k.lower() for k in kinds]
    k = len(kinds)
    dims = list(dims) if dims is not None else [1] + [n] * (k - 1)
    if len(dims) != k or dims[0] != 1:
        raise DomainViolation("dims must list one output size per layer, starting with 1")
    stochastic = set(stochastic)
    for i in stochastic:
        if kinds[i - 1] == "smoothable":
            raise WrongLayerClass("smoothable layers are deterministic")
    for i, kd in enumerate(kinds, start=1):
        if kd in ("nonsmooth", "smoothable") and any(j > i for j in stochastic):
            raise WrongLayerClass(f"layer {i} ({kd}) would receive a stochastic argument")
    rng = np.random.default_rng(seed)
    domain = Ball(np.zeros(n), radius)
    x_star = _interior_point(domain, rng)
    layers = [None] * k
    y = x_star
    for i in range(k, 0, -1):
        in_dim = n if i == k else dims[i]
        monotone = any(kd != "affine" for kd in kinds[i:])
        layer = make_layer(kinds[i - 1], in_dim, dims[i - 1], rng, monotone, y, kinks, gamma)
        if i in stochastic:
            layer = GaussianNoise(layer, noise, noise)
        layers[i - 1] = layer
        y = layer.value(y)
    return plant_optimum(layers, domain, x_star, alpha,
                         name=name or "stack-" + "-".join(kinds))


def two_layer_benchmark(n: int = 1, seed: int = 0, noise: float = 1.0, alpha: float = 0.0,
                        slope_ratio: float = 4.0, radius: float = 5.0) -> CompositionProblem:
    """Smooth outer layer over a stochastic non-smooth inner layer.

    ``f_2(x) = [max(r (x_i - x*_i), 0); max(x*_i - x_i, 0)]`` with Gaussian
    Jacobian noise and ``f_1 = sum softplus``.  The kink at ``x*`` has
    unequal one-sided slopes (ratio ``r``), so noisy steps leave a bias of
    the order of the stepsize in the averaged iterate and the observed rate
    is the noise-limited one rather than the faster rate of a symmetric kink.
    """
    rng = np.random.default_rng(seed)
    domain = Ball(np.zeros(n), radius)
    x_star = rng.uniform(-0.5, 0.5, n)
    eye = np.eye(n)
    inner = HingeLayer(np.vstack([slope_ratio * eye, -eye]),
                       np.concatenate([-slope_ratio * x_star, x_star]), name="asymmetric kink")
    if noise > 0:
        inner = GaussianNoise(inner, 0.0, noise)
    outer = SoftplusSumLayer(np.eye(2 * n), name="softplus sum")
    return plant_optimum([outer, inner], domain, x_star, alpha, name="two-layer")


def strongly_convex_benchmark(n: int = 2, seed: int = 0, noise: float = 0.5,
                              alpha: float = 1.0) -> CompositionProblem:
    """Smooth outer, stochastic smooth middle and deterministic affine inner layer."""
    return make_synthetic_stack(["smooth", "smooth", "affine"], [1, 3, 3], n, seed, alpha,
                                stochastic=(2,) if noise > 0 else (), noise=noise,
                                name="three-layer-sc")


# ---------------------------------------------------------------------------
# risk-averse problem


def h_gamma(z, gamma: float):
    """Smoothed plus function ``max_{0 <= p <= 1} p z - gamma p^2 / 2``."""
    z = np.asarray(z, dtype=float)
    if gamma <= 0:
        return np.maximum(z, 0.0)
    return np.where(z < 0, 0.0, np.where(z <= gamma, z * z / (2 * gamma), z - gamma / 2))


def h_gamma_grad(z, gamma: float):
    z = np.asarray(z, dtype=float)
    if gamma <= 0:
        return (z > 0).astype(float)
    return np.clip(z / gamma, 0.0, 1.0)


def h_gamma_dual_prox(y_tilde, pi_prev, tau: float, gamma: float):
    """``argmin_{0 <= p <= 1} -p y~ + gamma p^2/2 + tau/2 (p - pi_prev)^2``."""
    if tau + gamma <= 0:
        raise DomainViolation("need tau + gamma > 0")
    return np.clip((tau * np.asarray(pi_prev) + y_tilde) / (tau + gamma), 0.0, 1.0)


def semideviation(values, probs, c: float) -> float:
    """Upper semideviation risk ``E Z + c E (Z - E Z)_+``."""
    values, probs = np.asarray(values, dtype=float), np.asarray(probs, dtype=float)
    mean = probs @ values
    return float(mean + c * (probs @ np.maximum(values - mean, 0.0)))


def load_scenarios(source) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read a scenario table with header ``prob,d,c_1,...,c_n``.

    ``source`` is a path or the CSV text.  Returns ``(probs, d, C)`` with
    ``g(x, xi_s) = C[s] @ x + d[s]``.
    """
    text = Path(source).read_text() if isinstance(source, Path) or (
        isinstance(source, str) and "\n" not in source and Path(source).exists()) else str(source)
    rows = list(csv.reader(io.StringIO(text.strip())))
    header = [h.strip() for h in rows[0]]
    n = len(header) - 2
    if n < 1 or header[:2] != ["prob", "d"] or header[2:] != [f"c_{i}" for i in range(1, n + 1)]:
        raise ValueError(f"scenario header must be prob,d,c_1..c_n, got {header}")
    data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    if data.ndim != 2 or data.shape[1] != n + 2:
        raise ValueError("malformed scenario rows")
    probs = data[:, 0]
    if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
        raise ValueError(f"scenario probabilities must be >= 0 and sum to 1 (got {probs.sum()!r})")
    return probs, data[:, 1], data[:, 2:]


def default_risk_scenarios():
    """Four scenarios in dimension 2 used by the acceptance checks."""
    probs = np.array([0.1, 0.2, 0.3, 0.4])
    d = np.array([0.5, -0.2, 0.3, 0.0])
    C = np.array([[1.0, -0.5], [-0.8, 0.6], [0.3, 1.2], [-0.4, -0.9]])
    return probs, d, C


def risk_problem(probs, d, C, c: float = 0.5, gamma: float = 1e-2, domain=None,
                 stochastic: bool = True, name: str = "risk") -> CompositionProblem:
    """``min_x E g + c E h_gamma(g - E g)`` with ``g(x, xi) = C_xi x + d_xi``.

    Two layers: the outer ``f_1(y, x) = y + c E h_gamma(g(x, xi) - y)`` is
    semi-smooth (smooth in ``y``, non-smooth in ``x``), the inner
    ``f_2(x) = [E g(x, xi); x]`` is affine.  ``gamma = 0`` gives the exact
    semideviation as a deterministic non-smooth problem (for reference
    solves).
    """
    probs, d, C = (np.asarray(a, dtype=float) for a in (probs, d, C))
    S, n = C.shape
    domain = domain or Box(-np.ones(n), np.ones(n))
    R = domain.max_norm
    cbar, dbar = probs @ C, probs @ d
    Mg = float(np.max(np.linalg.norm(C, axis=1)))
    G = 2 * float(np.max(np.linalg.norm(C, axis=1) * R + np.abs(d)))
    eye = np.eye(n)

    def outer(cs, ds):
        def value(y):
            z = y[..., 1:] @ cs + ds - y[..., 0]
            return (y[..., 0] + c * h_gamma(z, gamma))[..., None]

        def jac(y):
            h = h_gamma_grad(y[1:] @ cs + ds - y[0], gamma)
            return np.concatenate([[1 - c * h], c * h * cs])[None, :]
        return value, jac

    M1 = float(np.hypot(1 + c, c * Mg))
    b1 = dict(M_Pi=M1, L_S=c / gamma if gamma > 0 else 0.0, M_N=c * Mg, sigma_pi=M1, sigma_f=c * G,
              M_f=G)
    if gamma > 0 and stochastic:
        scen1 = [SemiSmoothLayer(n + 1, 1, *outer(C[s], d[s]), [0], np.arange(1, n + 1), b1)
                 for s in range(S)]
        scen2 = [AffineLayer(np.vstack([C[s], eye]), np.concatenate([[d[s]], np.zeros(n)]))
                 for s in range(S)]
        f1 = ScenarioLayer(scen1, probs, bounds=b1, name="risk outer")
        f2 = ScenarioLayer(scen2, probs, input_radius=R, name="risk inner")
    else:
        def value(y):
            z = y[..., 1:] @ C.T + d - y[..., :1]
            return (y[..., 0] + c * h_gamma(z, gamma) @ probs)[..., None]

        def jac(y):
            h = probs * h_gamma_grad(C @ y[1:] + d - y[0], gamma)
            return np.concatenate([[1 - c * h.sum()], c * h @ C])[None, :]
        b1 = dict(b1, sigma_pi=0.0, sigma_f=0.0)
        if gamma > 0:
            f1 = SemiSmoothLayer(n + 1, 1, value, jac, [0], np.arange(1, n + 1), b1, name="risk outer")
        else:
            f1 = NonsmoothLayer(n + 1, 1, value, jac, b1, name="risk outer")
        f2 = AffineLayer(np.vstack([cbar, eye]), np.concatenate([[dbar], np.zeros(n)]))
    meta = {"schedule_overrides": {1: {"M_q": max(float(np.linalg.norm(cbar)), Mg), "M_qN": 1.0}},
            "scenarios": (probs, d, C), "c": c, "gamma": gamma}
    return CompositionProblem([f1, f2], domain, Regularizer(), name=name, meta=meta)


def risk_value(problem: CompositionProblem, x) -> float:
    """True semideviation risk at ``x`` for a problem built by :func:`risk_problem`."""
    probs, d, C = problem.meta["scenarios"]
    return semideviation(C @ np.asarray(x, dtype=float) + d, probs, problem.meta["c"])


# ---------------------------------------------------------------------------
# composite problems


def composite_problem(A, B, b, domain=None, alpha: float = 0.0, noise: float = 0.0,
                      name: str = "composite") -> CompositionProblem:
    """``min_x ||A x||_1 + 0.5 ||B x - b||^2 + u(x)`` as two layers.

    The inner layer stacks ``[A; I] x``; the outer layer adds ``||z||_1``
    (smoothable, dual rows in ``[-1, 1]``) and the least-squares term in
    ``x`` (smooth).  With ``noise > 0`` the ``A`` rows and the least-squares
    gradient get Gaussian noise.
    """
    A, B, b = (np.asarray(a, dtype=float) for a in (A, B, b))
    m, n = A.shape
    domain = domain or Ball(np.zeros(n), 1.0)
    F = BoxSmoothable(-np.ones((1, m)), np.ones((1, m)), name="l1")
    g = LeastSquaresLayer(B, b, radius=domain.max_norm, name="least squares")
    if noise > 0:
        g = GaussianNoise(g, 0.0, noise)
    f1 = MixtureLayer([(np.arange(m), F), (np.arange(m, m + n), g)], mode="cols", name="l1 + lsq")
    f2 = AffineLayer(np.vstack([A, np.eye(n)]))
    if noise > 0:
        f2 = GaussianNoise(f2, noise, noise, rows=np.arange(m))
    return CompositionProblem([f1, f2], domain, Regularizer(alpha, np.zeros(n) if alpha else None),
                              name=name)


def random_composite(seed: int = 0, n: int = 4, m: int = 3, p: int = 5, noise: float = 0.0,
                     alpha: float = 0.0) -> CompositionProblem:
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(m, n)) / np.sqrt(n)
    B = rng.normal(size=(p, n)) / np.sqrt(n)
    b = rng.normal(size=p)
    return composite_problem(A, B, b, Ball(np.zeros(n), 1.0), alpha, noise)


def minimax_problem(As, Bs, bs, domain=None, name: str = "minimax") -> CompositionProblem:
    """``min_x max_i ||A_i x||_1 + 0.5 ||B_i x - b_i||^2`` as three layers.

    Outer: ``max`` (smoothable, simplex duals).  Middle: ``||z_i||_1`` rows
    (smoothable) plus the least-squares rows (smooth).  Inner: ``[A_1; ...;
    A_m; I] x``.
    """
    As = [np.atleast_2d(np.asarray(a, dtype=float)) for a in As]
    m, n = len(As), As[0].shape[1]
    domain = domain or Ball(np.zeros(n), 1.0)
    sizes = [a.shape[0] for a in As]
    total = sum(sizes)
    lo, hi = np.zeros((m, total)), np.zeros((m, total))
    start = 0
    for i, s in enumerate(sizes):
        lo[i, start:start + s], hi[i, start:start + s] = -1.0, 1.0
        start += s
    F = BoxSmoothable(lo, hi, name="l1 rows")
    g = LeastSquaresLayer(np.asarray(Bs, dtype=float), np.asarray(bs, dtype=float),
                          radius=domain.max_norm, name="least squares rows")
    f2 = MixtureLayer([(np.arange(total), F), (np.arange(total, total + n), g)], mode="cols")
    f1 = SimplexSmoothable(m, name="max")
    f3 = AffineLayer(np.vstack(As + [np.eye(n)]))
    return CompositionProblem([f1, f2, f3], domain, Regularizer(), name=name)


def random_minimax(seed: int = 0, n: int = 3, m: int = 3, rows: int = 2, p: int = 4) -> CompositionProblem:
    rng = np.random.default_rng(seed)
    As = [rng.normal(size=(rows, n)) / np.sqrt(n) for _ in range(m)]
    Bs = [rng.normal(size=(p, n)) / np.sqrt(n) for _ in range(m)]
    bs = [rng.normal(size=p) for _ in range(m)]
    return minimax_problem(As, Bs, bs, Ball(np.zeros(n), 1.0))


def layer_kinds(problem: CompositionProblem) -> list[str]:
    out = []
    for layer in problem.layers:
        if layer.kind is LayerKind.MIXTURE:
            out.append("+".join(b.layer.kind.value for b in layer.blocks()))
        else:
            out.append(layer.kind.value)
    return out
