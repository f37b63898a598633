"""Command line front end: ``ssd run``, ``ssd slope`` and ``ssd accept``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .core import SSDError
from .harness import load_config, run_experiment, slope_estimate, summary_from_csv, summary_to_csv


def _cmd_run(args) -> int:
    cfg = load_config(args.config, regime=args.regime, horizons=args.horizons, seeds=args.seeds,
                      out=args.out, workers=args.workers)
    res = run_experiment(cfg)
    sys.stdout.write(summary_to_csv(res.summary))
    if len(res.summary) >= 3:
        for col, j in (("f_gap", 1), ("dist_sq", 2)):
            pts = [(row[0], row[j]) for row in res.summary]
            if all(g is not None and g > 0 for _, g in pts):
                print(f"slope[{col}] = {slope_estimate(pts):.4f}")
    if res.summary_path:
        print(f"wrote {res.summary_path}")
    return 0


def _cmd_slope(args) -> int:
    rows = summary_from_csv(Path(args.summary).read_text())
    j = {"f_gap": 1, "dist_sq": 2}[args.column]
    s = slope_estimate([(r[0], r[j]) for r in rows])
    print(f"{s:.6f}")
    ok = (args.max is None or s <= args.max) and (args.min is None or s >= args.min)
    if not ok:
        print(f"slope {s:.4f} outside [{args.min}, {args.max}]", file=sys.stderr)
    return 0 if ok else 1


def _cmd_accept(args) -> int:
    from .acceptance import CHECKS, run_all
    which = sorted(CHECKS) if not args.only else [int(s) for s in args.only.split(",")]
    unknown = [i for i in which if i not in CHECKS]
    if unknown:
        print(f"unknown checks {unknown}", file=sys.stderr)
        return 2
    results = run_all(which, echo=lambda line: print(line, flush=True))
    passed = sum(r.passed for r in results)
    print(f"{passed}/{len(results)} checks passed")
    return 0 if passed == len(results) else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ssd", description="Stochastic sequential dual experiments")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("--config", required=True)
    r.add_argument("--regime")
    r.add_argument("--horizons", help="comma separated, strictly increasing")
    r.add_argument("--seeds", help="a count or a comma separated list")
    r.add_argument("--out")
    r.add_argument("--workers")
    r.set_defaults(func=_cmd_run)
    s = sub.add_parser("slope", help="log-log slope of a summary CSV")
    s.add_argument("--summary", required=True)
    s.add_argument("--column", choices=("f_gap", "dist_sq"), default="f_gap")
    s.add_argument("--max", type=float, help="fail if the slope exceeds this")
    s.add_argument("--min", type=float, help="fail if the slope is below this")
    s.set_defaults(func=_cmd_slope)
    a = sub.add_parser("accept", help="run the acceptance checks")
    a.add_argument("--only", help="comma separated check numbers")
    a.set_defaults(func=_cmd_accept)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (SSDError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
