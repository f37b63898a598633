"""Acceptance checks 1-10.

Each ``check_<n>`` returns a :class:`CheckResult`; :func:`run_all` runs a
selection.  Expected values come from oracles that are independent of the
code under test (closed forms, root finding on first-order conditions,
certified reference solves, Monte-Carlo replays).
"""
from __future__ import annotations

import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from . import problems as P
from .core import DualSample, chain, gap_Q, lagrangian, lagrangian_value
from .harness import ExperimentConfig, run_experiment, slope_estimate
from .layers import Block, LeastSquaresLayer, SoftplusLayer
from .multilayer import BlockState, dual_update, run_restarted, run_ssd
from .policies import noise_constants
from .reference import reference_solve


@dataclass(frozen=True)
class CheckResult:
    number: int
    title: str
    passed: bool
    detail: str
    seconds: float
    limit: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.number:2d} {self.title}: {self.detail} ({self.seconds:.1f}s / {self.limit:.0f}s)"


def _timed(number, title, limit, fn):
    t0 = time.perf_counter()
    ok, detail = fn()
    dt = time.perf_counter() - t0
    if dt > limit:
        ok, detail = False, detail + f"; exceeded {limit:.0f}s"
    return CheckResult(number, title, bool(ok), detail, dt, limit)


# ---------------------------------------------------------------------------
# 1: implicit prox equals the explicit conjugate prox


def _explicit_prox_softplus(a, b, w, y_tilde, y_bar, tau):
    """Root of the explicit prox optimality condition for ``w softplus(a y + b)``.

    The objective is ``-pi y~ + f*(pi) + tau (f*(pi) - f*(pi_prev) - y_bar (pi - pi_prev))``
    with ``f*'(pi) = (logit(pi / (w a)) - b) / a`` on ``(0, w a)``.
    """
    hi = w * a

    def grad(pi):
        s = pi / hi
        return (1 + tau) * (np.log(s) - np.log1p(-s) - b) / a - y_tilde - tau * y_bar

    eps = hi * 1e-15
    return brentq(grad, eps, hi - eps, xtol=1e-15, rtol=1e-15, maxiter=500)


def _explicit_prox_quadratic(a, b, y_tilde, y_bar, tau):
    """``f(y) = a/2 y^2 + b y``: ``f*(pi) = (pi - b)^2 / (2a)``; stationarity is linear."""
    # (1 + tau)(pi - b)/a - y~ - tau y_bar = 0
    return b + a * (y_tilde + tau * y_bar) / (1 + tau)


def check_1(n_layers: int = 1000, seed: int = 0) -> CheckResult:
    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        for j in range(n_layers):
            y_bar, y_tilde = rng.normal(scale=2.0, size=2)
            tau = float(rng.uniform(0.0, 10.0))
            if j % 2:
                a, b, w = rng.uniform(0.3, 2.0), rng.normal(), rng.uniform(0.5, 2.0)
                layer = SoftplusLayer([[a]], [b], [w])
                ref = _explicit_prox_softplus(a, b, w, y_tilde, y_bar, tau)
            else:
                B, d = rng.uniform(0.3, 2.0), rng.normal()
                layer = LeastSquaresLayer([[B]], [d])
                ref = _explicit_prox_quadratic(B * B, -B * d, y_tilde, y_bar, tau)
            st = BlockState(1, 0, Block(None, None, layer), np.array([y_bar]), 16)
            dual_update(st, np.array([y_tilde]), tau)
            pi = layer.dual_at(st.point).pi[0, 0]
            worst = max(worst, abs(pi - ref))
        return worst <= 1e-9, f"max |pi_implicit - pi_explicit| = {worst:.2e} over {n_layers} layers"
    return _timed(1, "implicit prox equivalence", 5, run)


# ---------------------------------------------------------------------------
# 2: strong and weak duality


def _random_stack(rng, idx):
    k = int(rng.integers(1, 5))
    kinds = list(rng.choice(["smooth", "smoothable", "nonsmooth", "affine"], size=k))
    if kinds[0] == "affine":
        kinds[0] = "smooth"
    n = int(rng.integers(1, 4))
    dims = [1] + [int(rng.integers(1, 4)) for _ in range(k - 1)]
    for i in range(k):  # smoothable rows need at least as many inputs as outputs
        if kinds[i] == "smoothable":
            if i == k - 1:
                n = max(n, dims[i])
            else:
                dims[i + 1] = max(dims[i + 1], dims[i])
    return P.make_synthetic_stack(kinds, dims, n=n, seed=idx, alpha=float(rng.choice([0.0, 0.5])))


def _random_point(domain, rng):
    u = rng.normal(size=domain.dim)
    return domain.center + domain.radius * rng.uniform() ** (1 / domain.dim) * u / np.linalg.norm(u)


def check_2(n_stacks: int = 100, n_duals: int = 1000, seed: int = 1) -> CheckResult:
    def run():
        rng = np.random.default_rng(seed)
        strong, weak, qmin = 0.0, -np.inf, np.inf
        per = n_duals // n_stacks
        for s in range(n_stacks):
            p = _random_stack(rng, s)
            x_star, _ = p.optimum
            pi_star = p.exact_duals(x_star)
            for x in (x_star, _random_point(p.domain, rng)):
                strong = max(strong, abs(lagrangian(p, x, p.exact_duals(x)) - float(p.objective(x))))
            for _ in range(per):
                duals = [layer.dual_at(rng.normal(scale=2.0, size=layer.in_dim)) for layer in p.layers]
                x = _random_point(p.domain, rng)
                weak = max(weak, lagrangian(p, x, duals) - float(p.objective(x)))
                qmin = min(qmin, gap_Q(p, (x, duals), (x_star, pi_star)))
        ok = strong <= 1e-10 and weak <= 1e-9 and qmin >= -1e-9
        return ok, (f"strong duality err {strong:.1e}; max L - f = {weak:.1e}; "
                    f"min Q = {qmin:.1e} ({n_stacks} stacks, {per * n_stacks} duals)")
    return _timed(2, "duality", 30, run)


# ---------------------------------------------------------------------------
# 3: unbiased resampling and variance bounds


def _frozen_M_L(problem, solver):
    """``M_L`` overrides built from the frozen state (second-moment bounds)."""
    k = problem.k
    states = solver.states
    exact = [problem.layers[i].dual_at(states[i][0].point) for i in range(k)]
    M_L = {k + 1: float(max(np.linalg.norm(solver.x), np.linalg.norm(states[k - 1][0].point)))}
    for r in range(k, 1, -1):
        nc = noise_constants(problem, M_L)
        mean = lagrangian_value(exact[r - 1:], solver.x)
        second = float(mean @ mean + nc.sigma_lag[r] ** 2)
        anchor = states[r - 2][0].point
        M_L[r] = float(np.sqrt(max(anchor @ anchor, second)))
    return M_L, exact


def check_3(draws: int = 100_000, seed: int = 3) -> CheckResult:
    def run():
        p = P.make_synthetic_stack(["smooth", "smooth", "smooth"], [1, 2, 2], n=2, seed=seed,
                                   stochastic=(1, 2, 3), noise=0.3)
        k = p.k
        holder = []
        run_ssd(p, 15, seed=seed, solver_out=holder)
        sol = holder[0]
        M_L, exact = _frozen_M_L(p, sol)
        nc = noise_constants(p, M_L)
        x = sol.x
        prods = {i: np.empty((draws, 1 if i == 1 else p.layers[i - 1].out_dim, p.dim)) for i in range(1, k + 1)}
        lags = {i: np.empty((draws, p.layers[i - 2].in_dim)) for i in range(2, k + 1)}
        for d in range(draws):
            acc, y = None, x
            for i in range(k, 0, -1):
                st = sol.states[i - 1][0]
                pi, fstar, v = sol._sample_block(st, 10**6 + d, 0)
                s = DualSample(pi, fstar, 0, st.point, v)
                acc = pi if acc is None else pi @ acc
                prods[i][d] = acc
                y = s.apply(y)
                if i >= 2:
                    lags[i][d] = y
        worst_z, worst_ratio, notes = 0.0, 0.0, []
        for i in range(1, k + 1):
            truth = chain(e.pi for e in exact[i - 1:])
            m = prods[i].mean(axis=0)
            se = prods[i].std(axis=0, ddof=1) / np.sqrt(draws)
            z = float(np.max(np.abs(m - truth) / np.maximum(se, 1e-300)))
            worst_z = max(worst_z, z)
            var = float(np.sum(prods[i].var(axis=0, ddof=1)))
            ratio = var / nc.sigma_pi_from[i] ** 2
            worst_ratio = max(worst_ratio, ratio)
            notes.append(f"pi_{i}: z={z:.2f} var/bound={ratio:.2f}")
        for i in range(2, k + 1):
            truth = lagrangian_value(exact[i - 1:], x)
            m = lags[i].mean(axis=0)
            se = lags[i].std(axis=0, ddof=1) / np.sqrt(draws)
            z = float(np.max(np.abs(m - truth) / np.maximum(se, 1e-300)))
            worst_z = max(worst_z, z)
            var = float(np.sum(lags[i].var(axis=0, ddof=1)))
            ratio = var / nc.sigma_lag[i] ** 2
            worst_ratio = max(worst_ratio, ratio)
            notes.append(f"L_{i}: z={z:.2f} var/bound={ratio:.2f}")
        ok = worst_z <= 5 and worst_ratio <= 1.1
        return ok, f"max z {worst_z:.2f}, max var/bound {worst_ratio:.2f} [{'; '.join(notes)}]"
    return _timed(3, "resampling unbiasedness and variance", 60, run)


# ---------------------------------------------------------------------------
# 4: deterministic convex rates

A4_HORIZONS = [100, 200, 400, 800, 1600]
A4_INSTANCES = (
    ("nonsmooth-dominated", dict(kinds="smooth-smoothable-nonsmooth", n=2, seed=1), -0.35),
    ("smoothable-dominated", dict(kinds="smooth-smoothable-affine", n=2, seed=1), -0.9),
    ("all-smooth", dict(kinds="smooth-smooth-smooth", n=10, seed=0, radius=3.0), -1.7),
)


def check_4() -> CheckResult:
    def run():
        ok, notes = True, []
        for label, params, limit in A4_INSTANCES:
            cfg = ExperimentConfig("synthetic", params, horizons=A4_HORIZONS, seeds=[0],
                                   every=10**9, q_gap="false", ref_tol=1e-10)
            res = run_experiment(cfg)
            s = res.slope("f_gap")
            ok &= s <= limit
            notes.append(f"{label} slope {s:.2f} (<= {limit})")
        return ok, "; ".join(notes)
    return _timed(4, "deterministic convex rates", 300, run)


# ---------------------------------------------------------------------------
# 5: stochastic convex rate


def check_5() -> CheckResult:
    def run():
        cfg = ExperimentConfig("two_layer", {}, horizons=[400, 1600, 6400], seeds=list(range(20)),
                               every=10**9)
        res = run_experiment(cfg)
        s = res.slope("f_gap")
        meds = ", ".join(f"{m:.2e}" for _, m, _, _ in res.summary)
        return -0.65 <= s <= -0.35, f"median f-gap slope {s:.3f} in [-0.65, -0.35] (medians {meds})"
    return _timed(5, "stochastic convex rate", 600, run)


# ---------------------------------------------------------------------------
# 6: restarts on a strongly convex problem


def check_6(epochs: int = 9) -> CheckResult:
    def run():
        p = P.make_synthetic_stack(["smooth", "smooth", "smooth"], n=10, seed=0, radius=3.0, alpha=1.0)
        ref = reference_solve(p, 1e-12, subgradient_iters=0)
        x_star = ref.x_star
        D0 = p.domain.diameter ** 2  # >= 0.5 ||x0 - x*||^2
        res = run_restarted(p, D0, epochs)
        d = [float(np.sum((p.x0 - x_star) ** 2))] + [float(np.sum((q - x_star) ** 2)) for q in res.epoch_points]
        ratios = [d[j + 1] / d[j] if d[j] > 0 else 0.0 for j in range(len(d) - 1)]
        run_len, best = 0, 0
        for r in ratios:
            run_len = run_len + 1 if r <= 0.55 else 0
            best = max(best, run_len)
        return best >= 8, (f"{best} consecutive epochs with ratio <= 0.55; ratios "
                           + ", ".join(f"{r:.3f}" for r in ratios))
    return _timed(6, "strongly convex restart", 120, run)


# ---------------------------------------------------------------------------
# 7: stochastic strongly convex


def check_7() -> CheckResult:
    def run():
        cfg = ExperimentConfig("strongly_convex", {}, horizons=[200, 800, 3200], seeds=list(range(20)),
                               every=10**9)
        res = run_experiment(cfg)
        s = res.slope("dist_sq")
        return s <= -0.8, f"median ||x_bar - x*||^2 slope {s:.3f} (<= -0.8)"
    return _timed(7, "stochastic strongly convex", 600, run)


# ---------------------------------------------------------------------------
# 8: risk-averse application

A8_HORIZON = 8000
A8_SEEDS = 5


def check_8(eps: float = 1e-2, c: float = 0.5) -> CheckResult:
    def run():
        probs, d, C = P.default_risk_scenarios()
        p = P.risk_problem(probs, d, C, c=c, gamma=eps)
        exact = P.risk_problem(probs, d, C, c=c, gamma=0.0)
        ref = reference_solve(exact, 1e-9)
        errs = [P.risk_value(p, run_ssd(p, A8_HORIZON, seed=s).x_bar) - ref.f_star for s in range(A8_SEEDS)]
        g = np.linspace(-1, 1, 32)
        grid = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
        smooth = P.risk_problem(probs, d, C, c=c, gamma=eps, stochastic=False).objective(grid)
        rho = np.array([P.semideviation(C @ x + d, probs, c) for x in grid])
        diff = rho - smooth
        ok_grid = diff.min() >= -1e-12 and diff.max() <= c * eps / 2 + 1e-12
        ok = max(errs) <= eps and min(errs) >= -1e-9 and ok_grid
        return ok, (f"rho(x_bar) - rho* in [{min(errs):.1e}, {max(errs):.1e}] at N={A8_HORIZON} "
                    f"({A8_SEEDS} seeds, eps={eps}); 0 <= rho - f_gamma <= {diff.max():.2e} "
                    f"(c*gamma/2 = {c * eps / 2:.1e}) on {len(grid)} points")
    return _timed(8, "risk-averse application", 300, run)


# ---------------------------------------------------------------------------
# 9: composite application


def check_9() -> CheckResult:
    def run():
        det = P.random_composite(seed=0)
        ref = reference_solve(det, 1e-10)
        gap = float(det.objective(run_ssd(det, 5000).x_bar)) - ref.f_star
        sto = P.random_composite(seed=0, noise=0.5)
        cfg = ExperimentConfig("composite", dict(seed=0, noise=0.5), horizons=[400, 1600, 6400],
                               seeds=list(range(20)), every=10**9)
        res = run_experiment(cfg, sto, ref)
        meds = [m for _, m, _, _ in res.summary]
        s = slope_estimate([(n, m) for n, m, _, _ in res.summary])
        decreasing = all(b < a for a, b in zip(meds, meds[1:]))
        ok = gap <= 1e-4 and decreasing and s <= -0.4
        return ok, (f"deterministic gap {gap:.2e} at N=5000; stochastic medians "
                    + ", ".join(f"{m:.2e}" for m in meds) + f", slope {s:.3f} (<= -0.4)")
    return _timed(9, "composite application", 300, run)


# ---------------------------------------------------------------------------
# 10: byte-identical reruns


def check_10() -> CheckResult:
    def run():
        cfgs = [dict(problem="two_layer", params={}, horizons=[50, 100], seeds=[0, 1]),
                dict(problem="synthetic", params=dict(kinds="smooth-smoothable-nonsmooth"),
                     horizons=[60], seeds=[0], q_gap="true")]
        same, files = True, 0
        with tempfile.TemporaryDirectory() as tmp:
            for j, c in enumerate(cfgs):
                outs = []
                for rep in range(2):
                    out = Path(tmp) / f"cfg{j}_rep{rep}"
                    run_experiment(ExperimentConfig(**c, out=str(out)))
                    outs.append({f.name: f.read_bytes() for f in sorted(out.iterdir())})
                same &= outs[0] == outs[1] and len(outs[0]) > 0
                files += len(outs[0])
        return same, f"{files} CSV files byte-identical across reruns"
    return _timed(10, "determinism", 120, run)


CHECKS = {i: globals()[f"check_{i}"] for i in range(1, 11)}


def run_all(which=None, echo=None) -> list[CheckResult]:
    out = []
    for i in sorted(which or CHECKS):
        r = CHECKS[i]()
        if echo:
            echo(r.line())
        out.append(r)
    return out
