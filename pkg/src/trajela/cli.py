"""Command-line front end.

Subcommands mirror the experiment stages and persist their intermediate
artifacts under the output directory, so a full study is a sequence of
invocations over the same --out:

    run-trajectories -> select-median -> features traj -> features global
    -> select-features -> train -> report

run-trajectories stores the effective configuration in config.json; later
commands load it as their base so seeds and budgets stay consistent. Exit
codes: 0 success, 2 configuration or usage error, 3 numerical breakdown.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from collections import namedtuple
from pathlib import Path

import numpy as np

from .cma import NumericalBreakdownError
from .ela import DegenerateSampleError, ELA_FEATURE_NAMES, SampleSet
from .forest import SchemaError
from .harness import (
    BUILTIN_PORTFOLIOS,
    ConfigError,
    ExperimentConfig,
    FeatureRow,
    build_rows,
    compute_global_features,
    config_from_dict,
    custom_portfolio,
    portfolio_spec,
    run_feature_selection,
    run_trajectories,
    select_median_runs,
    train_and_evaluate,
    write_features_csv,
    write_global_csv,
    write_median_csv,
    write_precisions_csv,
    write_predictions_csv,
)
from .selection import RESERVED_PORTFOLIOS, load_portfolios, save_portfolios
from .selector import PredictionRecord, evaluate_portfolio, write_report_csv
from .state_features import SV_NAMES, DegenerateStateError

_StoredRun = namedtuple(
    "_StoredRun", ["fid", "iid", "run", "precision", "sample", "state", "state_evals"]
)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _effective_config(args, out: Path) -> ExperimentConfig:
    base = ExperimentConfig()
    stored = out / "config.json"
    if stored.exists():
        base = config_from_dict(_read_json(stored))
    overrides = {}
    if getattr(args, "config", None):
        overrides.update(_read_json(Path(args.config)))
    if getattr(args, "seed", None) is not None:
        overrides["master_seed"] = args.seed
    if getattr(args, "mode", None):
        overrides["mode"] = args.mode
    return config_from_dict(overrides, base)


def _read_json(path: Path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"missing file: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from None


def _require(path: Path, produced_by: str) -> Path:
    if not path.exists():
        raise ConfigError(f"missing {path.name}; run `{produced_by}` first")
    return path


# ----------------------------------------------------------- persistence


def _save_trajectories(out: Path, results) -> None:
    arrays = {}
    for r in results:
        key = f"{r.fid}_{r.iid}_{r.run}"
        arrays[f"X_{key}"] = r.sample.X
        arrays[f"y_{key}"] = r.sample.y
    np.savez_compressed(out / "trajectories.npz", **arrays)

    header = ["fid", "iid", "run", "evals"] + list(SV_NAMES)
    with open(out / "state_vars.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for r in sorted(results, key=lambda r: (r.fid, r.iid, r.run)):
            writer.writerow(
                [r.fid, r.iid, r.run, r.state_evals]
                + [repr(r.state[name]) for name in SV_NAMES]
            )


def _load_results(out: Path):
    """Rebuild run results from precisions.csv, state_vars.csv, and the npz."""
    _require(out / "precisions.csv", "run-trajectories")
    _require(out / "state_vars.csv", "run-trajectories")
    _require(out / "trajectories.npz", "run-trajectories")

    precisions = {}
    with open(out / "precisions.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            precisions[(int(row["fid"]), int(row["iid"]), int(row["run"]))] = float(
                row["precision"]
            )
    states = {}
    with open(out / "state_vars.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            key = (int(row["fid"]), int(row["iid"]), int(row["run"]))
            states[key] = (
                {name: float(row[name]) for name in SV_NAMES},
                int(row["evals"]),
            )
    results = []
    with np.load(out / "trajectories.npz") as archive:
        for key in sorted(precisions):
            fid, iid, run = key
            tag = f"{fid}_{iid}_{run}"
            sample = SampleSet(archive[f"X_{tag}"], archive[f"y_{tag}"])
            state, evals = states[key]
            results.append(
                _StoredRun(fid, iid, run, precisions[key], sample, state, evals)
            )
    return results


def _load_feature_rows(out: Path, cfg: ExperimentConfig):
    """Feature rows from features_trajectory.csv plus any global features."""
    path = _require(out / "features_trajectory.csv", "features traj")
    glob_by_instance = {}
    glob_path = out / "features_global.csv"
    if glob_path.exists():
        with open(glob_path, newline="") as fh:
            for row in csv.DictReader(fh):
                key = (int(row["fid"]), int(row["iid"]))
                glob_by_instance.setdefault(key, {})[int(row["size"])] = {
                    name: float(row[name]) for name in ELA_FEATURE_NAMES
                }
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            fid, iid, run = int(row["fid"]), int(row["iid"]), int(row["run"])
            rows.append(
                FeatureRow(
                    fid=fid,
                    iid=iid,
                    run=run,
                    target=float(row["target"]),
                    traj={n: float(row[n]) for n in ELA_FEATURE_NAMES},
                    sv={n: float(row[n]) for n in SV_NAMES},
                    glob=glob_by_instance.get((fid, iid), {}),
                    degenerate=tuple(
                        t for t in row.get("degenerate", "").split(";") if t
                    ),
                )
            )
    return rows


def _load_predictions(path: Path):
    records = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            records.append(
                PredictionRecord(
                    fid=int(row["fid"]),
                    iid=int(row["iid"]),
                    run=int(row["run"]),
                    true_precision=float(row["true_precision"]),
                    pred_unscaled=float(row["pred_unscaled"]),
                    pred_log10=float(row["pred_log10"]),
                )
            )
    return records


# ------------------------------------------------------------ subcommands


def _cmd_run_trajectories(args) -> int:
    out = _out_dir(args)
    cfg = _effective_config(args, out)
    results = run_trajectories(cfg)
    write_precisions_csv(out / "precisions.csv", results)
    _save_trajectories(out, results)
    with open(out / "config.json", "w") as fh:
        json.dump(dataclasses.asdict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"{len(results)} runs -> {out / 'precisions.csv'}")
    return 0


def _cmd_select_median(args) -> int:
    out = _out_dir(args)
    _effective_config(args, out)
    results = _load_results(out)
    chosen = select_median_runs(results)
    write_median_csv(out / "median_runs.csv", chosen)
    print(f"{len(chosen)} median runs -> {out / 'median_runs.csv'}")
    return 0


def _cmd_features(args) -> int:
    out = _out_dir(args)
    cfg = _effective_config(args, out)
    if args.source == "traj":
        results = _load_results(out)
        rows = build_rows(cfg, results)
        write_features_csv(out / "features_trajectory.csv", rows)
        print(f"{len(rows)} feature rows -> {out / 'features_trajectory.csv'}")
    else:
        features = compute_global_features(cfg)
        write_global_csv(out / "features_global.csv", features)
        print(f"{len(features)} instance/size medians -> {out / 'features_global.csv'}")
    return 0


def _resolve_portfolios(arg: str, out: Path) -> dict:
    """--portfolio accepts built-in names, selected names, or a JSON file."""
    path = Path(arg)
    if path.suffix == ".json" or path.exists():
        return {
            name: custom_portfolio(feats)
            for name, feats in load_portfolios(_require(path, "select-features")).items()
        }
    specs = {}
    selected_path = out / "portfolios.json"
    selected = load_portfolios(selected_path) if selected_path.exists() else {}
    for name in arg.split(","):
        name = name.strip()
        if name in BUILTIN_PORTFOLIOS:
            specs[name] = portfolio_spec(name)
        elif name in selected:
            specs[name] = custom_portfolio(selected[name])
        else:
            raise ConfigError(
                f"unknown portfolio {name!r}: not built-in, not in portfolios.json"
            )
    return specs


def _cmd_train(args) -> int:
    out = _out_dir(args)
    cfg = _effective_config(args, out)
    rows = _load_feature_rows(out, cfg)
    specs = _resolve_portfolios(args.portfolio, out)
    for name, spec in specs.items():
        if spec[0] == "glob" and not all(spec[1] in r.glob for r in rows):
            raise ConfigError(
                f"portfolio {name!r} needs global features of size {spec[1]};"
                " run `features global` first"
            )
        report, records = train_and_evaluate(cfg, rows, spec, name=name)
        write_predictions_csv(out / f"predictions_{name}.csv", records)
        print(
            f"{name}: tau={report.tau!r} rmse_combined={report.rmse_combined:.4f}"
            f" rmse_unscaled={report.rmse_unscaled:.4f} rmse_log={report.rmse_log:.4f}"
        )
    return 0


def _cmd_select_features(args) -> int:
    out = _out_dir(args)
    cfg = _effective_config(args, out)
    rows = _load_feature_rows(out, cfg)
    selected = run_feature_selection(cfg, rows)
    save_portfolios(out / "portfolios.json", selected)
    for name, feats in selected.items():
        print(f"{name}: {len(feats)} features")
    print(f"-> {out / 'portfolios.json'}")
    return 0


def _cmd_report(args) -> int:
    out = _out_dir(args)
    cfg = _effective_config(args, out)
    reports = {}
    found = sorted(out.glob("predictions_*.csv"))
    if not found:
        raise ConfigError("no predictions_*.csv in the output directory; run `train`")
    ordered = list(BUILTIN_PORTFOLIOS) + ["cor0.5", "cor0.75", "cor0.9", "rfe"]

    def rank(path):
        name = path.stem[len("predictions_") :]
        return (ordered.index(name) if name in ordered else len(ordered), name)

    for path in sorted(found, key=rank):
        name = path.stem[len("predictions_") :]
        report, _ = evaluate_portfolio(_load_predictions(path))
        reports[name] = report
    for name in RESERVED_PORTFOLIOS:
        reports.setdefault(name, None)
    write_report_csv(out / "report.csv", reports, fids=cfg.fids)
    print(f"{len(found)} portfolios -> {out / 'report.csv'}")
    return 0


# ------------------------------------------------------------------ entry


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trajela",
        description="Trajectory-based landscape analysis for fixed-budget "
        "performance prediction.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, mode=False, portfolio=False):
        p.add_argument("--out", default="results", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--config", default=None, help="JSON config overrides")
        if mode:
            p.add_argument(
                "--mode",
                choices=("median", "all-runs"),
                default=None,
                help="one row per instance (median run) or per run",
            )
        if portfolio:
            p.add_argument(
                "--portfolio",
                default="ELA+SV",
                help="built-in name(s), selected name, or portfolio JSON file",
            )

    p = sub.add_parser("run-trajectories", help="seeded CMA-ES runs on all instances")
    common(p)
    p.set_defaults(func=_cmd_run_trajectories)

    p = sub.add_parser("select-median", help="pick the median-precision run per instance")
    common(p)
    p.set_defaults(func=_cmd_select_median)

    p = sub.add_parser("features", help="compute landscape features")
    p.add_argument("source", choices=("traj", "global"))
    common(p, mode=True)
    p.set_defaults(func=_cmd_features)

    p = sub.add_parser("train", help="cross-validated dual-model training")
    common(p, mode=True, portfolio=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("select-features", help="per-fold portfolio selection")
    common(p)
    p.set_defaults(func=_cmd_select_features)

    p = sub.add_parser("report", help="assemble the portfolio comparison table")
    common(p)
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (NumericalBreakdownError, DegenerateStateError, DegenerateSampleError, SchemaError) as exc:
        print(f"numerical breakdown: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
