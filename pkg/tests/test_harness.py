import random

import numpy as np
import pytest

from ssd.cli import main
from ssd.harness import (CellResult, ExperimentConfig, build_problem, config_from_raw, load_config,
                         parse_config_text, parse_seeds, run_experiment, slope_estimate, summarize,
                         summary_from_csv, summary_to_csv)
from ssd.trace import TRACE_COLUMNS, TraceRow, trace_from_csv, trace_to_csv

CONFIG = """\
# small deterministic run
problem = synthetic
param.kinds = smooth-nonsmooth-affine
param.n = 2
param.seed = 1
horizons = 50, 100, 200
seeds = 1
every = 1
"""


def _write(tmp_path, text=CONFIG, name="exp.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_parse_config_grammar():
    raw = parse_config_text(CONFIG + "override.1.M_p = 2\noverride.2.0.M_q = 1.5\noverride.c = 0.1\n"
                            "override.D_Pi1 = 3\nregime = det_convex\n")
    cfg = config_from_raw(raw)
    assert cfg.problem == "synthetic" and cfg.horizons == [50, 100, 200] and cfg.seeds == [0]
    assert cfg.params == {"kinds": "smooth-nonsmooth-affine", "n": 2, "seed": 1}
    assert cfg.overrides == {1: {"M_p": 2.0}, (2, 0): {"M_q": 1.5}, "c": 0.1}
    assert cfg.D_Pi1 == 3.0 and cfg.regime == "det_convex"


def test_parse_errors():
    with pytest.raises(ValueError):
        parse_config_text("problem synthetic\n")
    with pytest.raises(ValueError):
        config_from_raw(parse_config_text("problem = x\nbogus = 1\n"))
    with pytest.raises(ValueError):
        config_from_raw(parse_config_text("horizons = 10\n"))
    with pytest.raises(ValueError):
        ExperimentConfig("synthetic", horizons=[100, 50])
    with pytest.raises(ValueError):
        ExperimentConfig("synthetic", solver="newton")
    with pytest.raises(ValueError):
        ExperimentConfig("synthetic", regime="fast")
    with pytest.raises(ValueError):
        build_problem("nope")


def test_seed_forms():
    assert parse_seeds("3") == [0, 1, 2]
    assert parse_seeds("4, 7, 9") == [4, 7, 9]
    assert parse_seeds([2]) == [2]


def test_flags_win(tmp_path):
    cfg = load_config(_write(tmp_path), horizons="10,20,40", seeds="2", regime=None, out=None)
    assert cfg.horizons == [10, 20, 40] and cfg.seeds == [0, 1] and cfg.out is None


def test_slope_examples():
    Ns = [100, 400, 1600, 6400]
    assert slope_estimate([(n, 3.0 / n) for n in Ns]) == pytest.approx(-1.0, abs=1e-12)
    assert slope_estimate([(n, n ** -0.5) for n in Ns]) == pytest.approx(-0.5, abs=1e-12)
    assert slope_estimate([(n, 7 * n ** -2.0) for n in Ns]) == pytest.approx(-2.0, abs=1e-12)
    with pytest.raises(ValueError):
        slope_estimate([(1, 1.0), (2, 0.5)])
    with pytest.raises(ValueError):
        slope_estimate([(1, 1.0), (2, 0.0), (3, 0.1)])


def test_trace_csv_round_trip():
    rows = [TraceRow(0, 0.5, 0.25, None, None), TraceRow(1, 1e-17, 3.0000000000000004, -0.0, 12.5),
            TraceRow(2, 0.1 + 0.2, None, 1e300, None)]
    text = trace_to_csv(rows)
    assert text.splitlines()[0] == ",".join(TRACE_COLUMNS)
    assert trace_from_csv(text) == rows


def test_summary_round_trip_and_permutation_invariance():
    rng = np.random.default_rng(0)
    cells = [CellResult(N, s, None, float(rng.uniform()), float(rng.uniform()), "")
             for N in (10, 20, 40) for s in range(7)]
    base = summarize(cells)
    assert len(base) == 3 and all(row[3] == 7 for row in base)
    shuffled = cells[:]
    random.Random(1).shuffle(shuffled)
    assert summarize(shuffled) == base
    assert summary_from_csv(summary_to_csv(base)) == base


def test_single_cell_writes_one_csv_with_n_rows(tmp_path):
    cfg = ExperimentConfig("synthetic", {"kinds": "smooth-nonsmooth-affine", "n": 2, "seed": 1},
                           horizons=[30], seeds=[0], out=str(tmp_path / "out"))
    res = run_experiment(cfg)
    files = sorted(p.name for p in (tmp_path / "out").iterdir())
    assert files == ["summary.csv", "synthetic_N30_s0.csv"]
    rows = trace_from_csv((tmp_path / "out" / "synthetic_N30_s0.csv").read_text())
    assert [r.t for r in rows] == list(range(30))
    assert all(r.q_gap is not None and r.q_gap >= -1e-9 for r in rows)
    assert all(r.f_gap >= -cfg.ref_tol for r in rows)
    assert len(res.summary) == 1


def test_stochastic_sweep_summary_shape_and_replay(tmp_path):
    def run(out):
        cfg = ExperimentConfig("two_layer", {"noise": 1.0}, solver="vanilla", horizons=[50, 100, 200],
                               seeds=list(range(20)), out=str(out), every=25, workers=2)
        return run_experiment(cfg)
    a, b = run(tmp_path / "a"), run(tmp_path / "b")
    assert len(a.summary) == 3 and all(row[3] == 20 for row in a.summary)
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert len(names) == 61
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_restart_solver_cells():
    cfg = ExperimentConfig("synthetic", {"kinds": "smooth-smooth-affine", "n": 2, "alpha": 1.0},
                           solver="restart", horizons=[1, 2, 3], seeds=[0], every=10 ** 9)
    res = run_experiment(cfg)
    d = [row[2] for row in res.summary]
    assert d[0] > d[1] > d[2]


def test_cli_run_and_slope(tmp_path, capsys):
    path = _write(tmp_path)
    out = tmp_path / "run"
    assert main(["run", "--config", str(path), "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "slope[f_gap]" in text
    summary = out / "summary.csv"
    assert main(["slope", "--summary", str(summary), "--max", "0"]) == 0
    assert main(["slope", "--summary", str(summary), "--max", "-50"]) == 1
    capsys.readouterr()


def test_cli_errors_exit_2(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "missing.cfg")]) == 2
    assert main(["run", "--config", str(_write(tmp_path, "problem = synthetic\nhorizons = 5, 3\n"))]) == 2
    assert main(["accept", "--only", "99"]) == 2
    capsys.readouterr()


def test_cli_accept_subset(capsys):
    assert main(["accept", "--only", "1,2"]) == 0
    out = capsys.readouterr().out
    assert out.count("[PASS]") == 2 and "2/2 checks passed" in out
