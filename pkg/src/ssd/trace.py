"""Per-iteration traces and their CSV form."""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .core import CompositionProblem, SolverDiverged, gap_Q

TRACE_COLUMNS = ("t", "f_gap", "dist_sq", "q_gap", "wall_ms")


class TraceRow(NamedTuple):
    t: int
    f_gap: float | None
    dist_sq: float | None
    q_gap: float | None
    wall_ms: float | None


@dataclass
class RunTrace:
    """Result of one solver run.

    ``rows[t]`` describes the averaged point after ``t + 1`` iterations.
    ``epochs`` lists the cumulative iteration counts at which restarts
    happened (empty for a single run).  ``stream_keys`` lists the random
    stream keys ``(oracle, t, tag)`` consumed, when recording was requested.
    """

    rows: list = field(default_factory=list)
    x_bar: np.ndarray | None = None
    x_last: np.ndarray | None = None
    epochs: list = field(default_factory=list)
    epoch_points: list = field(default_factory=list)
    stream_keys: list = field(default_factory=list)

    @property
    def final(self) -> TraceRow:
        return self.rows[-1]


class Tracker:
    """Records trace rows against a reference ``(x*, f*)``.

    Parameters
    ----------
    x_star, f_star : optional
        Reference solution and value; missing entries give empty columns.
    ref_duals : optional
        Exact duals at ``x*``; when given the gap ``Q`` of the current
        iterate is recorded.
    timing : bool
        Record wall-clock milliseconds (breaks byte-identical reruns).
    every : int
        Record one row every ``every`` iterations (and always the last).
    """

    def __init__(self, problem: CompositionProblem, x_star=None, f_star=None, ref_duals=None,
                 timing: bool = False, every: int = 1):
        self.problem = problem
        self.x_star = None if x_star is None else np.asarray(x_star, dtype=float)
        self.f_star = f_star
        self.ref_duals = ref_duals
        self.timing = timing
        self.every = max(1, int(every))
        self.rows: list[TraceRow] = []
        self._t0 = time.perf_counter()

    def wants(self, t: int, last: bool) -> bool:
        return last or (t + 1) % self.every == 0

    def record(self, t: int, x_bar: np.ndarray, x_cur=None, duals=None) -> TraceRow:
        if not np.all(np.isfinite(x_bar)):
            raise SolverDiverged(f"non-finite iterate at t={t}")
        p = self.problem
        f_gap = None if self.f_star is None else float(p.objective(x_bar)) - self.f_star
        dist = None if self.x_star is None else float(np.sum((x_bar - self.x_star) ** 2))
        q = None
        if self.ref_duals is not None and duals is not None:
            q = gap_Q(p, (x_cur, duals), (self.x_star, self.ref_duals))
        ms = (time.perf_counter() - self._t0) * 1e3 if self.timing else None
        row = TraceRow(t, f_gap, dist, q, ms)
        self.rows.append(row)
        return row


# ---------------------------------------------------------------------------
# CSV


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _num(s: str):
    return None if s == "" else float(s)


def trace_to_csv(trace: RunTrace | list) -> str:
    rows = trace.rows if isinstance(trace, RunTrace) else trace
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def trace_from_csv(text: str) -> list[TraceRow]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header) != TRACE_COLUMNS:
        raise ValueError(f"unexpected trace header {header}")
    out = []
    for rec in reader:
        if len(rec) != len(TRACE_COLUMNS):
            raise ValueError(f"malformed trace row {rec}")
        out.append(TraceRow(int(rec[0]), *(_num(s) for s in rec[1:])))
    return out


def rows_equal(a, b) -> bool:
    """Exact equality of traces, treating empty cells alike."""
    if len(a) != len(b):
        return False
    for ra, rb in zip(a, b):
        for va, vb in zip(ra, rb):
            if (va is None) != (vb is None):
                return False
            if va is not None and not (va == vb or (math.isnan(va) and math.isnan(vb))):
                return False
    return True
