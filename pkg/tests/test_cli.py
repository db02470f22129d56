"""CLI tests: full pipeline on a miniature configuration, exit codes, and
byte reproducibility of the persisted artifacts."""

import csv
import json

import pytest

from trajela.cli import main

MINI = {
    "fids": [1, 2, 8],
    "iids": [1, 2],
    "runs_per_instance": 3,
    "budget": 120,
    "snapshot_at": 60,
    "trajectory_prefix": 60,
    "global_sample_sizes": [250],
    "global_repetitions": 2,
    "cv_folds": 2,
    "n_trees": 15,
    "model_repeats": 2,
    "rfe_n_trees": 8,
}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Run the whole subcommand chain once; tests inspect the artifacts."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps(MINI))
    out = root / "results"
    steps = [
        ["run-trajectories", "--out", str(out), "--seed", "5", "--config", str(cfg)],
        ["select-median", "--out", str(out)],
        ["features", "traj", "--out", str(out)],
        ["features", "global", "--out", str(out)],
        ["train", "--out", str(out), "--portfolio", "ELA+SV,GLOB250"],
        ["report", "--out", str(out)],
    ]
    for step in steps:
        assert main(step) == 0, step
    return out


def test_artifacts_exist(pipeline):
    for name in (
        "config.json",
        "precisions.csv",
        "state_vars.csv",
        "trajectories.npz",
        "median_runs.csv",
        "features_trajectory.csv",
        "features_global.csv",
        "predictions_ELA+SV.csv",
        "predictions_GLOB250.csv",
        "report.csv",
    ):
        assert (pipeline / name).exists(), name


def test_precisions_layout(pipeline):
    with open(pipeline / "precisions.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 18
    assert all(float(r["precision"]) >= 0 for r in rows)


def test_predictions_header(pipeline):
    with open(pipeline / "predictions_ELA+SV.csv", newline="") as fh:
        header = fh.readline().strip()
    assert header == "fid,iid,run,true_precision,pred_unscaled,pred_log10"


def test_report_layout(pipeline):
    with open(pipeline / "report.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    # reserved selector names keep their columns even though they never ran
    assert rows[0] == ["row", "ELA+SV", "GLOB250", "boruta", "swfb"]
    assert rows[1][0] == "best_tau"
    assert rows[-1][0] == "overall_rmse_log"
    assert rows[1][3] == ""


def test_same_seed_reproduces_bytes(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(MINI))
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        assert main(["run-trajectories", "--out", str(out), "--seed", "9",
                     "--config", str(cfg)]) == 0
        outs.append(out)
    assert (outs[0] / "precisions.csv").read_bytes() == (
        outs[1] / "precisions.csv"
    ).read_bytes()
    assert (outs[0] / "state_vars.csv").read_bytes() == (
        outs[1] / "state_vars.csv"
    ).read_bytes()


def test_seed_changes_results(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(MINI))
    blobs = []
    for seed in ("9", "10"):
        out = tmp_path / f"s{seed}"
        assert main(["run-trajectories", "--out", str(out), "--seed", seed,
                     "--config", str(cfg)]) == 0
        blobs.append((out / "precisions.csv").read_bytes())
    assert blobs[0] != blobs[1]


def test_missing_inputs_exit_2(tmp_path):
    out = tmp_path / "empty"
    assert main(["select-median", "--out", str(out)]) == 2
    assert main(["features", "traj", "--out", str(out)]) == 2
    assert main(["report", "--out", str(out)]) == 2


def test_bad_config_exits_2(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"budgets": 100}))
    assert main(["run-trajectories", "--out", str(tmp_path / "o"),
                 "--config", str(cfg)]) == 2
    cfg.write_text("not json")
    assert main(["run-trajectories", "--out", str(tmp_path / "o"),
                 "--config", str(cfg)]) == 2


def test_unknown_portfolio_exits_2(pipeline):
    assert main(["train", "--out", str(pipeline), "--portfolio", "NOPE"]) == 2


def test_degenerate_feature_sample_exits_3(tmp_path):
    # a trajectory prefix below the feature minimum must fail loudly
    bad = dict(MINI, trajectory_prefix=20)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(bad))
    out = tmp_path / "results"
    assert main(["run-trajectories", "--out", str(out), "--seed", "5",
                 "--config", str(cfg)]) == 0
    assert main(["features", "traj", "--out", str(out)]) == 3


def test_custom_portfolio_file(pipeline, tmp_path):
    portfolio = tmp_path / "mine.json"
    portfolio.write_text(json.dumps({"mine": ["step_size", "ic.h.max"]}))
    assert main(["train", "--out", str(pipeline), "--portfolio", str(portfolio)]) == 0
    assert (pipeline / "predictions_mine.csv").exists()
