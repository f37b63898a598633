"""High-accuracy reference solutions with a certified optimality gap.

The certificate comes from the ellipsoid method: every ellipsoid contains the
minimizers, so a cut ``g`` at a feasible centre ``x`` with shape matrix ``P``
gives the lower bound ``f(x) - sqrt(g' P g)``.  Independent candidates (grid
zoom in dimension <= 2, projected subgradient with averaging, a planted
optimum) are checked against that bound.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Ball, Box, CompositionProblem, NoConvergenceCertificate


@dataclass(frozen=True)
class ReferenceSolution:
    """``x_star`` with ``f_star - tol <= min f <= f_star``."""

    x_star: np.ndarray
    f_star: float
    tol: float
    lower: float
    method: str


def _enclosing(domain):
    """Centre and radius of a ball containing the domain."""
    if isinstance(domain, Ball):
        return domain.center.copy(), domain.radius
    if isinstance(domain, Box):
        return 0.5 * (domain.lo + domain.hi), 0.5 * float(np.linalg.norm(domain.hi - domain.lo))
    raise TypeError(f"unsupported domain {type(domain).__name__}")


def _feasibility_cut(domain, x):
    """Normal of a halfspace containing the domain but not ``x`` (None if feasible)."""
    if isinstance(domain, Ball):
        d = x - domain.center
        return d if np.linalg.norm(d) > domain.radius else None
    over = x - domain.hi
    under = domain.lo - x
    i = int(np.argmax(np.maximum(over, under)))
    if over[i] > 0:
        return np.eye(x.size)[i]
    if under[i] > 0:
        return -np.eye(x.size)[i]
    return None


def ellipsoid(problem: CompositionProblem, tol: float = 1e-10, max_iter: int = 200_000):
    """Central-cut ellipsoid method (bisection in one dimension).

    Returns ``(x_best, f_best, lower_bound, iterations)``.
    """
    dom = problem.domain
    n = problem.dim
    c, R = _enclosing(dom)
    best_x, best_f, lower = None, np.inf, -np.inf
    if n == 1:
        a, b = c[0] - R, c[0] + R
        for it in range(max_iter):
            m = np.array([0.5 * (a + b)])
            cut = _feasibility_cut(dom, m)
            if cut is None:
                fx = float(problem.objective(m))
                g = problem.subgradient(m)
                if fx < best_f:
                    best_x, best_f = m, fx
                lower = max(lower, fx - abs(g[0]) * 0.5 * (b - a))
                if best_f - lower <= tol:
                    return best_x, best_f, lower, it + 1
                if g[0] == 0:
                    return m, fx, fx, it + 1
            else:
                g = cut
            if g[0] > 0:
                b = m[0]
            else:
                a = m[0]
        return best_x, best_f, lower, max_iter
    # E = {x + B u : ||u|| <= 1}; updating the factor B keeps the shape positive definite
    x = c.astype(float)
    B = np.eye(n) * R
    a = n / np.sqrt(n * n - 1.0)
    b = n / (n + 1.0) - a
    for it in range(max_iter):
        cut = _feasibility_cut(dom, x)
        if cut is None:
            fx = float(problem.objective(x))
            g = problem.subgradient(x)
        else:
            g = cut
        q = B.T @ g
        width = float(np.linalg.norm(q))
        if cut is None:
            if fx < best_f:
                best_x, best_f = x.copy(), fx
            lower = max(lower, fx - width)
            if best_f - lower <= tol or width == 0.0:
                return best_x, best_f, lower, it + 1
        if not np.isfinite(width) or width <= 1e-300:
            break
        p = q / width
        Bp = B @ p
        x = x - Bp / (n + 1)
        B = a * B + b * np.outer(Bp, p)
    return best_x, best_f, lower, max_iter


def grid_zoom(problem: CompositionProblem, points: int = 101, levels: int = 60,
              min_width: float = 1e-13):
    """Repeated grid search on shrinking windows (dimension <= 2)."""
    n = problem.dim
    if n > 2:
        raise ValueError("grid search is limited to dimension <= 2")
    dom = problem.domain
    c, R = _enclosing(dom)
    lo, hi = c - R, c + R
    best_x, best_f = None, np.inf
    for _ in range(levels):
        axes = [np.linspace(lo[i], hi[i], points) for i in range(n)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
        if isinstance(dom, Ball):
            d = pts - dom.center
            nrm = np.linalg.norm(d, axis=1, keepdims=True)
            pts = np.where(nrm > dom.radius, dom.center + d * (dom.radius / np.maximum(nrm, 1e-300)), pts)
        else:
            pts = np.clip(pts, dom.lo, dom.hi)
        vals = problem.objective(pts)
        j = int(np.argmin(vals))
        if vals[j] < best_f:
            best_x, best_f = pts[j].copy(), float(vals[j])
        cell = (hi - lo) / (points - 1)
        if np.max(cell) < min_width:
            break
        lo, hi = best_x - 3 * cell, best_x + 3 * cell
    return best_x, best_f


def projected_subgradient(problem: CompositionProblem, iters: int = 20_000, x0=None):
    """Projected subgradient with steps ``D / (G sqrt(t+1))`` and step-weighted averaging.

    Returns the better of the average and the best iterate.
    """
    dom = problem.domain
    x = dom.project(problem.x0.copy() if x0 is None else np.asarray(x0, dtype=float))
    D = 2 * _enclosing(dom)[1]
    best_x, best_f = x.copy(), float(problem.objective(x))
    acc, wsum = np.zeros_like(x), 0.0
    G = None
    for t in range(iters):
        g = problem.subgradient(x)
        gn = float(np.linalg.norm(g))
        G = max(G or 0.0, gn, 1e-12)
        step = D / (G * np.sqrt(t + 1))
        acc += step * x
        wsum += step
        x = dom.project(x - step * g)
        fx = float(problem.objective(x))
        if fx < best_f:
            best_x, best_f = x.copy(), fx
    avg = acc / wsum
    f_avg = float(problem.objective(avg))
    return (avg, f_avg) if f_avg < best_f else (best_x, best_f)


def reference_solve(problem: CompositionProblem, tol: float = 1e-8, subgradient_iters: int = 5_000,
                    grid: bool | None = None, max_iter: int = 200_000) -> ReferenceSolution:
    """Certified minimizer of ``f + u`` over the domain.

    Raises
    ------
    NoConvergenceCertificate
        If the certified gap exceeds ``tol`` or an independent candidate
        beats the certified lower bound by more than ``tol``.
    """
    x_e, f_e, lower, _ = ellipsoid(problem, tol=0.1 * tol, max_iter=max_iter)
    if x_e is None:
        raise NoConvergenceCertificate("ellipsoid method found no feasible centre")
    cands = {"ellipsoid": (x_e, f_e)}
    if grid is None:
        grid = problem.dim <= 2
    if grid:
        cands["grid"] = grid_zoom(problem)
    if subgradient_iters:
        cands["subgradient"] = projected_subgradient(problem, subgradient_iters)
    if problem.optimum is not None:
        xs = np.asarray(problem.optimum[0], dtype=float)
        cands["planted"] = (xs, float(problem.objective(xs)))
    for name, (_, fv) in cands.items():
        if fv < lower - tol:
            raise NoConvergenceCertificate(
                f"{name} value {fv!r} is below the certified lower bound {lower!r}")
    method = min(cands, key=lambda k: cands[k][1])
    x, fv = cands[method]
    gap = fv - lower
    if gap > tol:
        raise NoConvergenceCertificate(f"certified gap {gap:.3e} exceeds tol {tol:.1e}")
    return ReferenceSolution(np.asarray(x, dtype=float).copy(), fv, max(gap, 0.0), lower, method)
