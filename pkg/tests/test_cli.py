import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from trajpi.cli import EXIT_IO, EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, evaluate_model, main
from trajpi.envs.trajectories import TrajectorySet, read_trajectories
from trajpi.io import load_model


@pytest.fixture
def battle_file(tmp_path):
    path = tmp_path / "battle.jsonl"
    assert main(["simulate", "--env", "battle", "--n", "400", "--horizon", "15", "--seed", "3",
                 "--out", str(path), "--workers", "2"]) == EXIT_OK
    return path


@pytest.fixture
def sqbox_model(tmp_path, battle_file):
    path = tmp_path / "model.npz"
    assert main(["fit", "--data", str(battle_file), "--l", "200", "--m", "50", "--delta", "0.1",
                 "--trees", "20", "--min-leaf", "10", "--seed", "1", "--out", str(path)]) == EXIT_OK
    return path


def test_simulate_writes_records_and_is_reproducible(tmp_path, capsys):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    for out in (a, b):
        assert main(["simulate", "--env", "tamarisk", "--n", "10", "--horizon", "50", "--seed", "7",
                     "--out", str(out)]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()
    records, header = read_trajectories(a)
    assert len(records) == 10 and all(len(r.behavior) == 50 for r in records)
    assert header["config"]["seed"] == 7 and header["config"]["env_config"]["budget"] == 2.0
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["records"] == 10


def test_simulate_usage_errors(tmp_path):
    assert main(["simulate", "--env", "starcraft", "--n", "3"]) == EXIT_USAGE
    assert main(["simulate", "--env", "battle", "--output-dir", str(tmp_path)]) == EXIT_USAGE
    assert main(["simulate", "--env", "battle", "--n", "0", "--output-dir", str(tmp_path)]) == EXIT_VALIDATION
    assert main([]) == EXIT_USAGE


def test_entry_point_exit_status(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "trajpi.cli", "simulate", "--env", "nope", "--n", "1"],
                          capture_output=True, text=True, cwd=tmp_path)
    assert proc.returncode == EXIT_USAGE and "invalid choice" in proc.stderr


def test_fit_predict_band_is_ordered(tmp_path, battle_file, sqbox_model, capsys):
    data = TrajectorySet.from_records(read_trajectories(battle_file)[0])
    start = ",".join(str(v) for v in data.features[0])
    capsys.readouterr()
    assert main(["predict", "--model", str(sqbox_model), "--start", start]) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "t,lo,hi" and len(lines) == 16
    for line in lines[1:]:
        _, lo, hi = line.split(",")
        assert float(lo) <= float(hi)
    out = tmp_path / "band.csv"
    assert main(["predict", "--model", str(sqbox_model), "--start", json.dumps(list(data.features[0])),
                 "--out", str(out)]) == EXIT_OK
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["t", "lo", "hi"] and rows[1][0] == "1"
    assert main(["predict", "--model", str(sqbox_model), "--start", "a,b"]) == EXIT_USAGE
    assert main(["predict", "--model", str(sqbox_model), "--start", "1,2,3"]) == EXIT_VALIDATION


def test_model_round_trip_is_bit_identical(battle_file, sqbox_model):
    from trajpi.qrf import ForestParams
    from trajpi.trajband import SplitConfig, fit_sqbox

    data = TrajectorySet.from_records(read_trajectories(battle_file)[0])
    fresh = fit_sqbox(data.behavior, data.features, SplitConfig(200, 50, 0.1, 0.2), ForestParams(20, 10, "third", 1))
    loaded = load_model(sqbox_model)
    a, b = fresh.predict(data.features), loaded.predict(data.features)
    np.testing.assert_array_equal(a.lo, b.lo)
    np.testing.assert_array_equal(a.hi, b.hi)
    assert loaded.beta == fresh.beta and loaded.config == fresh.config
    assert loaded.meta["provenance"]["config"]["seed"] == 1


def test_evaluate_on_calibration_rows(tmp_path, battle_file, sqbox_model):
    out = tmp_path / "report.json"
    assert main(["evaluate", "--model", str(sqbox_model), "--data", str(battle_file), "--out", str(out)]) == EXIT_OK
    doc = json.loads(out.read_text())
    assert doc["config"]["l"] == 200 and doc["kind"] == "sqbox"

    # on the calibration rows alone, coverage is at least k / n_cal by construction
    model = load_model(sqbox_model)
    data = TrajectorySet.from_records(read_trajectories(battle_file)[0])
    calib = data.take(np.arange(250, 400))
    rep = evaluate_model(model, calib)
    from trajpi.conformal import conformal_index
    assert rep["hits"] >= conformal_index(150, 0.1)
    assert rep["coverage"] >= 1 - 0.1


def test_fit_cte_and_evaluate(tmp_path, battle_file):
    model = tmp_path / "cte.npz"
    assert main(["fit", "--data", str(battle_file), "--method", "cte", "--l", "200", "--delta", "0.2",
                 "--trees", "10", "--min-leaf", "10", "--out", str(model)]) == EXIT_OK
    out = tmp_path / "r.json"
    assert main(["evaluate", "--model", str(model), "--data", str(battle_file), "--out", str(out)]) == EXIT_OK
    rep = json.loads(out.read_text())["report"]
    assert rep["c_hat"] >= 0 and 0 <= rep["coverage_lower"] <= rep["coverage"] <= 1


def test_split_infeasible_reports_constraint(battle_file, capsys):
    code = main(["fit", "--data", str(battle_file), "--l", "300", "--m", "50", "--delta", "0.01",
                 "--trees", "5", "--out", "/dev/null"])
    assert code == EXIT_VALIDATION
    assert "n-l-m+1" in capsys.readouterr().err


def test_io_failures(tmp_path, sqbox_model):
    assert main(["fit", "--data", str(tmp_path / "missing.jsonl")]) == EXIT_IO
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"id": 1}\n')
    assert main(["fit", "--data", str(bad)]) == EXIT_IO
    assert main(["predict", "--model", str(bad), "--start", "1,2"]) == EXIT_IO
    short = tmp_path / "short.jsonl"
    main(["simulate", "--env", "battle", "--n", "5", "--horizon", "4", "--out", str(short)])
    assert main(["evaluate", "--model", str(sqbox_model), "--data", str(short),
                 "--output-dir", str(tmp_path)]) == EXIT_IO
    assert main(["plot-data", "--report", str(short)]) == EXIT_IO


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "sim.yaml"
    cfg.write_text("env: battle\nn: 4\nhorizon: 6\nseed: 5\nenv_config:\n  noise_sd: 0.0\n")
    out = tmp_path / "t.jsonl"
    assert main(["simulate", "--config", str(cfg), "--n", "3", "--out", str(out)]) == EXIT_OK
    records, header = read_trajectories(out)
    assert len(records) == 3 and header["config"]["seed"] == 5
    assert all(float(x).is_integer() for r in records for x in r.behavior)
    cfg.write_text("- not a mapping\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == EXIT_IO


def test_environment_overrides(tmp_path, monkeypatch):
    monkeypatch.setenv("TRAJPI_OUTPUT_DIR", str(tmp_path / "outdir"))
    monkeypatch.setenv("TRAJPI_WORKERS", "3")
    assert main(["simulate", "--env", "battle", "--n", "2", "--horizon", "3"]) == EXIT_OK
    assert (tmp_path / "outdir" / "battle-trajectories.jsonl").exists()
    monkeypatch.setenv("TRAJPI_WORKERS", "many")
    assert main(["simulate", "--env", "battle", "--n", "2", "--horizon", "3"]) == EXIT_USAGE


def test_experiment_quick_is_reproducible(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["experiment", "gaussian", "--quick", "--output-dir", str(d)]) == EXIT_OK
    ra, rb = (d / "gaussian-quick-report.json" for d in (a, b))
    assert ra.read_bytes() == rb.read_bytes()
    report = json.loads(ra.read_text())
    assert report["config"]["replications"] == 10 and report["config"]["n_test"] == 500
    fields = {"rho", "delta", "method", "mean_coverage", "coverage_lower", "coverage_delta_quantile", "mean_width"}
    assert all(fields <= r.keys() for r in report["records"])
    assert (a / "gaussian-quick-records.csv").exists()
    rows = list(csv.reader((a / "gaussian-quick-plot-data.csv").open()))
    assert rows[0] == ["x", "y", "series"] and len(rows) == 1 + 3 * 24
    assert "rho=0 delta=0.2 sbox" in capsys.readouterr().out


def test_experiment_mdp_with_config(tmp_path):
    cfg = tmp_path / "mdp.yaml"
    cfg.write_text("n_total: 1300\nn_test: 300\nsizes: [250, 500]\nhorizon: 10\nfailure_size: 500\n"
                   "env_overrides:\n  noise_sd: 0.0\n")
    assert main(["experiment", "battle", "--config", str(cfg), "--trees", "5", "--m", "40",
                 "--output-dir", str(tmp_path)]) == EXIT_OK
    report = json.loads((tmp_path / "battle-report.json").read_text())
    assert report["config"]["tree_count"] == 5 and report["config"]["m"] == 40
    assert report["config"]["env_overrides"] == {"noise_sd": 0.0}
    assert len(report["records"]) == 2 * 4 * 5
    out = tmp_path / "plot.csv"
    assert main(["plot-data", "--report", str(tmp_path / "battle-report.json"), "--out", str(out)]) == EXIT_OK
    series = {row[2] for row in list(csv.reader(out.open()))[1:]}
    assert "exceedance-bound cte delta=0.1" in series
    cfg.write_text("bogus: 1\n")
    assert main(["experiment", "battle", "--config", str(cfg), "--output-dir", str(tmp_path)]) == EXIT_USAGE
