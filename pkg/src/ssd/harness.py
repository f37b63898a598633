"""Experiment configs, the problem registry, sweeps over horizons and seeds,
and rate-slope estimation.

Config grammar (one ``key = value`` per line, ``#`` starts a comment)::

    problem     = two_layer          # registry name
    param.noise = 1.0                # constructor keyword (int/float/bool/str/list)
    solver      = ssd                # ssd | vanilla | restart
    regime      = sto_convex         # optional, default from the problem
    horizons    = 400, 1600, 6400    # strictly increasing
    seeds       = 20                 # count (0..19) or a list "0, 3, 7"
    master_seed = 0
    out         = runs/two_layer
    every       = 1                  # trace every n-th iteration
    timing      = false              # fill wall_ms (breaks byte-identical reruns)
    q_gap       = auto               # auto (deterministic problems) | true | false
    ref_tol     = 1e-8
    workers     = 1
    override.1.M_p = 2.0             # per-layer schedule constants
    override.2.0.M_q = 1.5           # per-(layer, block)
    override.c = 0.1                 # free constant of the strongly convex regimes
    override.D_Pi1 = 1.0             # vanilla outer dual distance bound

For ``solver = restart`` each horizon is a number of epochs.
"""
from __future__ import annotations

import ast
import csv
import io
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import problems as P
from .core import CompositionProblem
from .multilayer import run_restarted, run_ssd
from .policies import Regime
from .reference import ReferenceSolution, reference_solve
from .rng import derive_seed
from .trace import Tracker, trace_to_csv
from .vanilla import run_vanilla

SUMMARY_COLUMNS = ("N", "median_f_gap", "median_dist_sq", "seeds")


# ---------------------------------------------------------------------------
# problem registry


def _synthetic(kinds="smooth-smoothable-nonsmooth", **kw):
    if isinstance(kinds, str):
        kinds = kinds.split("-")
    if "stochastic" in kw and isinstance(kw["stochastic"], int):
        kw["stochastic"] = (kw["stochastic"],)
    return P.make_synthetic_stack(kinds, **kw)


def _risk(scenarios=None, **kw):
    probs, d, C = P.load_scenarios(scenarios) if scenarios else P.default_risk_scenarios()
    return P.risk_problem(probs, d, C, **kw)


PROBLEMS = {
    "synthetic": _synthetic,
    "two_layer": P.two_layer_benchmark,
    "strongly_convex": P.strongly_convex_benchmark,
    "risk": _risk,
    "composite": P.random_composite,
    "minimax": P.random_minimax,
}


def build_problem(name: str, params: dict | None = None) -> CompositionProblem:
    try:
        ctor = PROBLEMS[name]
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; known: {sorted(PROBLEMS)}") from None
    return ctor(**(params or {}))


# ---------------------------------------------------------------------------
# config


@dataclass
class ExperimentConfig:
    problem: str
    params: dict = field(default_factory=dict)
    solver: str = "ssd"
    regime: str | None = None
    horizons: list = field(default_factory=lambda: [100])
    seeds: list = field(default_factory=lambda: [0])
    master_seed: int = 0
    out: str | None = None
    every: int = 1
    timing: bool = False
    q_gap: str = "auto"
    ref_tol: float = 1e-8
    workers: int = 1
    overrides: dict = field(default_factory=dict)
    D_Pi1: float | None = None

    def __post_init__(self):
        self.horizons = [int(n) for n in self.horizons]
        if not self.horizons or any(n < 1 for n in self.horizons):
            raise ValueError("horizons must be positive")
        if any(b <= a for a, b in zip(self.horizons, self.horizons[1:])):
            raise ValueError("horizons must be strictly increasing")
        self.seeds = [int(s) for s in self.seeds]
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be a non-empty list of distinct integers")
        if self.solver not in ("ssd", "vanilla", "restart"):
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.q_gap not in ("auto", "true", "false"):
            raise ValueError("q_gap must be auto, true or false")
        if self.regime is not None:
            Regime.parse(self.regime)

    def regime_obj(self) -> Regime | None:
        return None if self.regime is None else Regime.parse(self.regime)


def _value(text: str):
    text = text.strip()
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "null"):
        return None
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        pass
    if "," in text:
        return tuple(_value(part) for part in text.split(","))
    return text


def _int_list(v) -> list[int]:
    if isinstance(v, (int, np.integer)):
        return [int(v)]
    return [int(x) for x in v]


def parse_seeds(v) -> list[int]:
    """``20`` means seeds ``0..19``; a sequence is taken as is."""
    if isinstance(v, str):
        v = _value(v)
    if isinstance(v, (int, np.integer)):
        return list(range(int(v)))
    return _int_list(v)


def parse_config_text(text: str) -> dict:
    """Flat ``key = value`` text into a raw dict (nested for ``param.`` / ``override.``)."""
    raw: dict = {"params": {}, "overrides": {}}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ValueError(f"line {lineno}: empty key")
        if key.startswith("param."):
            raw["params"][key[6:]] = _value(val)
        elif key.startswith("override."):
            parts = key.split(".")[1:]
            if parts == ["D_Pi1"]:
                raw["D_Pi1"] = float(_value(val))
            elif parts == ["c"]:
                raw["overrides"]["c"] = float(_value(val))
            elif len(parts) == 2:
                raw["overrides"].setdefault(int(parts[0]), {})[parts[1]] = float(_value(val))
            elif len(parts) == 3:
                raw["overrides"].setdefault((int(parts[0]), int(parts[1])), {})[parts[2]] = float(_value(val))
            else:
                raise ValueError(f"line {lineno}: bad override key {key!r}")
        else:
            raw[key] = val
    return raw


_SCALARS = {"problem": str, "solver": str, "regime": str, "out": str, "master_seed": int,
            "every": int, "ref_tol": float, "workers": int, "q_gap": str}


def config_from_raw(raw: dict) -> ExperimentConfig:
    kw = {"params": raw.get("params", {}), "overrides": raw.get("overrides", {})}
    if "D_Pi1" in raw:
        kw["D_Pi1"] = raw["D_Pi1"]
    for key, val in raw.items():
        if key in ("params", "overrides", "D_Pi1"):
            continue
        if key in _SCALARS:
            v = val.strip() if isinstance(val, str) else val
            kw[key] = _SCALARS[key](_value(v) if _SCALARS[key] is not str else v)
        elif key == "horizons":
            kw[key] = _int_list(_value(val) if isinstance(val, str) else val)
        elif key == "seeds":
            kw[key] = parse_seeds(val)
        elif key == "timing":
            kw[key] = bool(_value(val)) if isinstance(val, str) else bool(val)
        else:
            raise ValueError(f"unknown config key {key!r}")
    if "problem" not in kw:
        raise ValueError("config needs a problem")
    if kw.get("regime") in ("", "none", "auto"):
        kw["regime"] = None
    if "q_gap" in kw:
        kw["q_gap"] = kw["q_gap"].lower()
    return ExperimentConfig(**kw)


def load_config(path, **flags) -> ExperimentConfig:
    """Read a config file; keyword ``flags`` (non-None) take precedence."""
    raw = parse_config_text(Path(path).read_text())
    for k, v in flags.items():
        if v is not None:
            raw[k] = v
    return config_from_raw(raw)


# ---------------------------------------------------------------------------
# running


@dataclass(frozen=True)
class CellResult:
    N: int
    seed: int
    path: str | None
    f_gap: float | None
    dist_sq: float | None
    csv_text: str


def cell_seed(master: int, N: int, seed: int) -> int:
    return derive_seed(master, N, seed)


def _want_q(cfg: ExperimentConfig, problem: CompositionProblem) -> bool:
    if cfg.q_gap == "auto":
        return not problem.stochastic and cfg.solver == "ssd"
    return cfg.q_gap == "true"


def run_cell(cfg: ExperimentConfig, problem: CompositionProblem, ref: ReferenceSolution,
             N: int, seed: int) -> CellResult:
    """One ``(N, seed)`` run; returns its CSV text (and writes it under ``cfg.out``)."""
    ref_duals = problem.exact_duals(ref.x_star) if _want_q(cfg, problem) else None
    tr = Tracker(problem, ref.x_star, ref.f_star, ref_duals, cfg.timing, cfg.every)
    s = cell_seed(cfg.master_seed, N, seed)
    regime = cfg.regime_obj()
    if cfg.solver == "ssd":
        res = run_ssd(problem, N, regime, s, tr, overrides=cfg.overrides)
    elif cfg.solver == "vanilla":
        res = run_vanilla(problem, N, s, tracker=tr, D_Pi1=cfg.D_Pi1)
    else:
        D0 = problem.domain.diameter ** 2
        res = run_restarted(problem, D0, N, regime, s, tr, overrides=cfg.overrides)
    text = trace_to_csv(res)
    path = None
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        path = str(out / f"{cfg.problem}_N{N}_s{seed}.csv")
        Path(path).write_text(text)
    last = res.final
    return CellResult(N, seed, path, last.f_gap, last.dist_sq, text)


def _run_cell_args(args):
    return run_cell(*args)


def _median(vals):
    vals = [v for v in vals if v is not None]
    return float(np.median(vals)) if vals else None


def summarize(cells) -> list[tuple]:
    """``(N, median f_gap, median dist_sq, #seeds)`` per horizon, sorted by ``N``."""
    by_n: dict[int, list[CellResult]] = {}
    for c in cells:
        by_n.setdefault(c.N, []).append(c)
    out = []
    for N in sorted(by_n):
        cs = sorted(by_n[N], key=lambda c: c.seed)
        out.append((N, _median([c.f_gap for c in cs]), _median([c.dist_sq for c in cs]), len(cs)))
    return out


def summary_to_csv(summary) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for N, fg, ds, ns in summary:
        w.writerow([N, "" if fg is None else repr(fg), "" if ds is None else repr(ds), ns])
    return buf.getvalue()


def summary_from_csv(text: str) -> list[tuple]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header) != SUMMARY_COLUMNS:
        raise ValueError(f"unexpected summary header {header}")
    num = lambda s: None if s == "" else float(s)
    return [(int(r[0]), num(r[1]), num(r[2]), int(r[3])) for r in reader if r]


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    reference: ReferenceSolution
    cells: list
    summary: list
    summary_path: str | None = None

    def slope(self, column: str = "f_gap") -> float:
        j = {"f_gap": 1, "dist_sq": 2}[column]
        return slope_estimate([(row[0], row[j]) for row in self.summary])


def run_experiment(cfg: ExperimentConfig, problem: CompositionProblem | None = None,
                   reference: ReferenceSolution | None = None) -> ExperimentResult:
    """Run every ``(N, seed)`` cell and write per-cell CSVs plus ``summary.csv``."""
    problem = problem or build_problem(cfg.problem, cfg.params)
    ref = reference or reference_solve(problem, cfg.ref_tol)
    jobs = [(cfg, problem, ref, N, s) for N in cfg.horizons for s in cfg.seeds]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            cells = list(ex.map(_run_cell_args, jobs))
    else:
        cells = [run_cell(*j) for j in jobs]
    cells.sort(key=lambda c: (c.N, c.seed))
    summary = summarize(cells)
    path = None
    if cfg.out:
        path = os.path.join(cfg.out, "summary.csv")
        Path(path).write_text(summary_to_csv(summary))
    return ExperimentResult(cfg, ref, cells, summary, path)


def slope_estimate(points) -> float:
    """Least-squares slope of ``log(gap)`` against ``log(N)``."""
    pts = [(float(n), float(g)) for n, g in points]
    if len(pts) < 3:
        raise ValueError("need at least 3 points")
    if any(n <= 0 or g <= 0 for n, g in pts):
        raise ValueError("horizons and gaps must be positive")
    x = np.log([n for n, _ in pts])
    y = np.log([g for _, g in pts])
    return float(np.polyfit(x, y, 1)[0])

