"""Experiment orchestration: trajectory runs, global sampling, feature rows,
leave-one-instance-out training, and report assembly.

Every stochastic task draws from its own SeedSequence derived from the master
seed plus a fixed stream tag and the task coordinates, so results are
byte-identical no matter how work is distributed over a pool. All CSV output
renders floats with repr() for lossless round-trips.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import bbob, cma
from .ela import ELA_FEATURE_NAMES, SampleSet, compute_all
from .forest import TrainingSet, fit, oob_predictions, predict_matrix
from .selector import (
    PortfolioReport,
    PredictionRecord,
    _exp10,
    abs_errors_by_function,
    apply_threshold,
    evaluate_portfolio,
    optimize_threshold,
    rmse,
)
from .selection import (
    correlation_filter,
    fold_intersection,
    recursive_feature_elimination,
)
from .state_features import SV_NAMES, extract_state_variables

__all__ = [
    "BUILTIN_PORTFOLIOS",
    "ConfigError",
    "ExperimentConfig",
    "FeatureRow",
    "LeakageError",
    "RunResult",
    "audit_folds",
    "build_rows",
    "compute_global_features",
    "config_from_dict",
    "loio_folds",
    "custom_portfolio",
    "portfolio_spec",
    "run_feature_selection",
    "run_trajectories",
    "select_median_runs",
    "train_and_evaluate",
    "training_set",
    "write_features_csv",
    "write_global_csv",
    "write_median_csv",
    "write_precisions_csv",
    "write_predictions_csv",
]

# seed stream tags: one namespace per kind of stochastic task
_STREAM_RUNS = 101
_STREAM_GLOBAL = 202
_STREAM_FOREST = 303
_STREAM_SELECT = 404


class ConfigError(ValueError):
    """The experiment configuration is inconsistent."""


class LeakageError(RuntimeError):
    """A test row leaked into its fold's training matrix."""


@dataclass(frozen=True)
class ExperimentConfig:
    dim: int = 5
    fids: tuple = tuple(range(1, 25))
    iids: tuple = (1, 2, 3, 4, 5)
    runs_per_instance: int = 20
    budget: int = 500
    snapshot_at: int = 250
    trajectory_prefix: int = 250
    global_sample_sizes: tuple = (250, 2000)
    global_repetitions: int = 50
    cv_folds: int = 5
    master_seed: int = 0
    n_trees: int = 1000
    model_repeats: int = 3
    rfe_n_trees: int = 200
    tau_policy: str = "pooled"
    mode: str = "median"
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "fids", tuple(int(f) for f in self.fids))
        object.__setattr__(self, "iids", tuple(int(i) for i in self.iids))
        object.__setattr__(
            self, "global_sample_sizes", tuple(int(s) for s in self.global_sample_sizes)
        )
        if self.dim < 2:
            raise ConfigError("dim must be at least 2")
        if not self.fids or any(not 1 <= f <= 24 for f in self.fids):
            raise ConfigError("fids must be a nonempty subset of 1..24")
        if not self.iids or any(i < 1 for i in self.iids):
            raise ConfigError("iids must be positive")
        if len(set(self.iids)) != len(self.iids):
            raise ConfigError("iids must be distinct")
        if self.runs_per_instance < 1:
            raise ConfigError("runs_per_instance must be positive")
        if not 0 < self.snapshot_at <= self.budget:
            raise ConfigError("snapshot_at must lie in (0, budget]")
        if not 0 < self.trajectory_prefix <= self.budget:
            raise ConfigError("trajectory_prefix must lie in (0, budget]")
        if self.cv_folds != len(self.iids):
            raise ConfigError(
                "cv_folds must equal the instance count (leave-one-instance-out)"
            )
        if self.global_repetitions < 1:
            raise ConfigError("global_repetitions must be positive")
        if self.model_repeats < 1:
            raise ConfigError("model_repeats must be positive")
        if self.tau_policy not in ("pooled", "nested"):
            raise ConfigError("tau_policy must be 'pooled' or 'nested'")
        if self.mode not in ("median", "all-runs"):
            raise ConfigError("mode must be 'median' or 'all-runs'")
        if self.workers < 1:
            raise ConfigError("workers must be positive")
        if self.master_seed < 0:
            raise ConfigError("master_seed must be non-negative")


def config_from_dict(overrides: dict, base: ExperimentConfig = None) -> ExperimentConfig:
    base = base or ExperimentConfig()
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(overrides) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        return replace(base, **overrides)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _pool_map(workers: int, fn, tasks):
    """Order-preserving map, optionally through a thread pool.

    Each task owns its seeds, so the result is independent of `workers`.
    """
    tasks = list(tasks)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, tasks))
    return [fn(t) for t in tasks]


# ----------------------------------------------------------- trajectories


@dataclass(frozen=True)
class RunResult:
    fid: int
    iid: int
    run: int
    precision: float
    sample: SampleSet  # first trajectory_prefix evaluations
    state: dict  # state variables at the snapshot
    state_evals: int  # evaluation count the snapshot actually landed on


def run_trajectories(cfg: ExperimentConfig):
    """All seeded CMA-ES runs, sorted by (fid, iid, run)."""

    def one(task):
        fid, iid, run = task
        inst = bbob.make_instance(fid, iid, cfg.dim)
        seed = np.random.SeedSequence(
            [cfg.master_seed, _STREAM_RUNS, fid, iid, run]
        )
        traj, snap = cma.run(inst, cfg.budget, seed, snapshot_at=cfg.snapshot_at)
        sv = extract_state_variables(snap.state, snap.population)
        prefix = SampleSet(
            traj.X[: cfg.trajectory_prefix], traj.y[: cfg.trajectory_prefix]
        )
        return RunResult(
            fid=fid,
            iid=iid,
            run=run,
            precision=traj.precision_at_budget,
            sample=prefix,
            state=sv.as_dict(),
            state_evals=snap.evals,
        )

    tasks = [
        (fid, iid, run)
        for fid in cfg.fids
        for iid in cfg.iids
        for run in range(cfg.runs_per_instance)
    ]
    return _pool_map(cfg.workers, one, tasks)


def select_median_runs(results) -> dict:
    """Per (fid, iid): the run holding the lower median target precision.

    With 20 sorted runs that is the 10th; ties are broken by run index and a
    single run selects itself.
    """
    groups = {}
    for r in results:
        groups.setdefault((r.fid, r.iid), []).append(r)
    chosen = {}
    for key, runs in groups.items():
        precisions = sorted(r.precision for r in runs)
        median = precisions[(len(precisions) - 1) // 2]
        chosen[key] = min(r.run for r in runs if r.precision == median)
    return chosen


# -------------------------------------------------------- global sampling


def compute_global_features(cfg: ExperimentConfig) -> dict:
    """Median over repeated uniform-sample feature computations.

    Returns {(fid, iid, size): {feature name: median value}}. These depend
    only on the instance, never on any CMA-ES run.
    """
    provenance = {250: "global250", 2000: "global2000"}

    def one(task):
        fid, iid, size = task
        inst = bbob.make_instance(fid, iid, cfg.dim)
        reps = np.empty((cfg.global_repetitions, len(ELA_FEATURE_NAMES)))
        for rep in range(cfg.global_repetitions):
            rng = np.random.default_rng(
                [cfg.master_seed, _STREAM_GLOBAL, fid, iid, size, rep]
            )
            X = rng.uniform(-5.0, 5.0, size=(size, cfg.dim))
            fv = compute_all(
                SampleSet(X, bbob.evaluate(inst, X)),
                provenance.get(size, "global250"),
                fid=fid,
                iid=iid,
            )
            reps[rep] = [fv.values[name] for name in ELA_FEATURE_NAMES]
        med = np.median(reps, axis=0)
        return task, dict(zip(ELA_FEATURE_NAMES, map(float, med)))

    tasks = [
        (fid, iid, size)
        for fid in cfg.fids
        for iid in cfg.iids
        for size in cfg.global_sample_sizes
    ]
    return dict(_pool_map(cfg.workers, one, tasks))


# ------------------------------------------------------------ feature rows


@dataclass(frozen=True)
class FeatureRow:
    fid: int
    iid: int
    run: int
    target: float  # target precision at the budget
    traj: dict  # trajectory-sample landscape features
    sv: dict  # CMA-ES state variables at the snapshot
    glob: dict = field(default_factory=dict)  # {size: {feature: value}}
    degenerate: tuple = ()


def build_rows(cfg: ExperimentConfig, results, global_features=None) -> list:
    """Assemble one feature row per run (all-runs) or per instance (median)."""
    if cfg.mode == "median":
        chosen = select_median_runs(results)
        picked = [r for r in results if chosen[(r.fid, r.iid)] == r.run]
    else:
        picked = list(results)
    global_features = global_features or {}

    def one(r):
        fv = compute_all(r.sample, "trajectory", fid=r.fid, iid=r.iid, run=r.run)
        glob = {
            size: global_features[(r.fid, r.iid, size)]
            for size in cfg.global_sample_sizes
            if (r.fid, r.iid, size) in global_features
        }
        return FeatureRow(
            fid=r.fid,
            iid=r.iid,
            run=r.run,
            target=r.precision,
            traj=dict(fv.values),
            sv=dict(r.state),
            glob=glob,
            degenerate=tuple(sorted(fv.degenerate)),
        )

    rows = _pool_map(cfg.workers, one, picked)
    return sorted(rows, key=lambda row: (row.fid, row.iid, row.run))


# -------------------------------------------------------------- portfolios

BUILTIN_PORTFOLIOS = (
    "SV",
    "ELA",
    "ELA+SV",
    "GLOB2k",
    "GLOB2k+SV",
    "GLOB250",
    "GLOB250+SV",
)

_SV_SET = frozenset(SV_NAMES)


def portfolio_spec(name: str):
    """(source, global size or None, feature names) for a built-in portfolio."""
    ela = tuple(ELA_FEATURE_NAMES)
    sv = tuple(SV_NAMES)
    table = {
        "SV": ("traj", None, sv),
        "ELA": ("traj", None, ela),
        "ELA+SV": ("traj", None, ela + sv),
        "GLOB2k": ("glob", 2000, ela),
        "GLOB2k+SV": ("glob", 2000, ela + sv),
        "GLOB250": ("glob", 250, ela),
        "GLOB250+SV": ("glob", 250, ela + sv),
    }
    if name not in table:
        raise ConfigError(f"unknown portfolio {name!r}")
    return table[name]


def custom_portfolio(names) -> tuple:
    """A trajectory-sourced portfolio over explicit feature names."""
    names = tuple(names)
    valid = set(ELA_FEATURE_NAMES) | _SV_SET
    unknown = [n for n in names if n not in valid]
    if unknown:
        raise ConfigError(f"unknown features in portfolio: {unknown}")
    if not names:
        raise ConfigError("portfolio must name at least one feature")
    return ("traj", None, names)


def _row_value(row: FeatureRow, spec, name: str) -> float:
    source, size, _ = spec
    if name in _SV_SET:
        return row.sv[name]
    if source == "traj":
        return row.traj[name]
    return row.glob[size][name]


def training_set(rows, spec) -> TrainingSet:
    _, _, names = spec
    X = np.array([[_row_value(r, spec, n) for n in names] for r in rows])
    y = np.array([r.target for r in rows])
    meta = tuple((r.fid, r.iid, r.run) for r in rows)
    return TrainingSet(X, y, names, meta)


# ----------------------------------------------------------- cross-validation


def loio_folds(cfg: ExperimentConfig, rows):
    """Leave-one-instance-out folds: (held-out iid, train rows, test rows)."""
    folds = []
    for iid in cfg.iids:
        train = [r for r in rows if r.iid != iid]
        test = [r for r in rows if r.iid == iid]
        folds.append((iid, train, test))
    return folds


def audit_folds(folds) -> dict:
    """Verify the leave-one-instance-out contract; raises LeakageError.

    Returns {fold iid: (train size, test size)} when clean.
    """
    sizes = {}
    for iid, train, test in folds:
        train_keys = {(r.fid, r.iid, r.run) for r in train}
        for r in test:
            if r.iid != iid:
                raise LeakageError(f"fold {iid}: test row with iid {r.iid}")
            if (r.fid, r.iid, r.run) in train_keys:
                raise LeakageError(f"fold {iid}: test row {(r.fid, r.iid, r.run)} in train")
        if any(r.iid == iid for r in train):
            raise LeakageError(f"fold {iid}: training row carries the held-out iid")
        sizes[iid] = (len(train), len(test))
    return sizes


def _median_predictions(cfg, fold_iid, train_set, test_X, transform):
    """Median over model_repeats independently seeded forests."""
    tcode = 0 if transform == "raw" else 1
    preds = []
    oob = []
    for repeat in range(cfg.model_repeats):
        seed = int(
            np.random.SeedSequence(
                [cfg.master_seed, _STREAM_FOREST, fold_iid, tcode, repeat]
            ).generate_state(1)[0]
        )
        model = fit(
            train_set,
            transform,
            seed=seed,
            n_trees=cfg.n_trees,
            workers=cfg.workers,
        )
        preds.append(predict_matrix(model, test_X))
        if cfg.tau_policy == "nested":
            oob.append(oob_predictions(model, train_set.features)[0])
    test_pred = np.median(np.stack(preds), axis=0)
    train_oob = np.median(np.stack(oob), axis=0) if oob else None
    return test_pred, train_oob


def train_and_evaluate(cfg: ExperimentConfig, rows, portfolio, name="portfolio"):
    """Cross-validated dual-model training and threshold evaluation.

    portfolio is a spec from portfolio_spec()/custom_portfolio(). Returns
    (PortfolioReport, prediction records sorted by fid, iid, run).
    """
    folds = loio_folds(cfg, rows)
    audit_folds(folds)
    pooled = []
    fold_taus = []
    for iid, train_rows, test_rows in folds:
        if len(train_rows) < 2 or not test_rows:
            raise ConfigError(f"fold {iid} has too few rows to train on")
        train = training_set(train_rows, portfolio)
        test_X = training_set(test_rows, portfolio).features
        raw_pred, raw_oob = _median_predictions(cfg, iid, train, test_X, "raw")
        log_pred, log_oob = _median_predictions(cfg, iid, train, test_X, "log10")
        records = [
            PredictionRecord(
                fid=r.fid,
                iid=r.iid,
                run=r.run,
                true_precision=r.target,
                pred_unscaled=float(u),
                pred_log10=float(l),
            )
            for r, u, l in zip(test_rows, raw_pred, log_pred)
        ]
        if cfg.tau_policy == "nested":
            train_records = [
                PredictionRecord(
                    fid=r.fid,
                    iid=r.iid,
                    run=r.run,
                    true_precision=r.target,
                    pred_unscaled=float(u),
                    pred_log10=float(l),
                )
                for r, u, l in zip(train_rows, raw_oob, log_oob)
            ]
            tau = optimize_threshold(train_records)
            fold_taus.append(tau)
            records = apply_threshold(records, tau)
        pooled.extend(records)

    pooled.sort(key=lambda r: (r.fid, r.iid, r.run))
    if cfg.tau_policy == "pooled":
        report, combined = evaluate_portfolio(pooled)
        return report, combined

    # nested: records already combined with their fold's tau
    truths = [r.true_precision for r in pooled]
    report = PortfolioReport(
        tau=float(np.median(fold_taus)),
        rmse_combined=rmse(truths, [r.pred_combined for r in pooled]),
        rmse_unscaled=rmse(truths, [r.pred_unscaled for r in pooled]),
        rmse_log=rmse(truths, [_exp10(r.pred_log10) for r in pooled]),
        mae_by_fid=abs_errors_by_function(pooled),
    )
    return report, pooled


# -------------------------------------------------------- feature selection


def run_feature_selection(cfg: ExperimentConfig, rows) -> dict:
    """Correlation filters and RFE, per training fold, merged by intersection.

    Selection always operates on the trajectory ELA+SV columns. An empty
    intersection is legal (the selection function warns); training such a
    portfolio then fails loudly rather than silently.
    """
    spec = portfolio_spec("ELA+SV")
    folds = loio_folds(cfg, rows)
    audit_folds(folds)
    selected = {}
    for threshold, pname in ((0.5, "cor0.5"), (0.75, "cor0.75"), (0.9, "cor0.9")):
        per_fold = []
        for _, train_rows, _ in folds:
            ts = training_set(train_rows, spec)
            per_fold.append(
                correlation_filter(ts.features, ts.feature_names, threshold)
            )
        selected[pname] = fold_intersection(per_fold)

    per_fold = []
    for iid, train_rows, _ in folds:
        ts = training_set(train_rows, spec)
        seed = int(
            np.random.SeedSequence(
                [cfg.master_seed, _STREAM_SELECT, iid]
            ).generate_state(1)[0]
        )
        per_fold.append(
            recursive_feature_elimination(
                ts, keep="auto", seed=seed, n_trees=cfg.rfe_n_trees
            )
        )
    selected["rfe"] = fold_intersection(per_fold)
    return selected


# ------------------------------------------------------------- CSV output


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def write_precisions_csv(path, results) -> None:
    ordered = sorted(results, key=lambda r: (r.fid, r.iid, r.run))
    _write_csv(
        path,
        ["fid", "iid", "run", "precision"],
        [[r.fid, r.iid, r.run, repr(r.precision)] for r in ordered],
    )


def write_median_csv(path, chosen: dict) -> None:
    _write_csv(
        path,
        ["fid", "iid", "run"],
        [[fid, iid, run] for (fid, iid), run in sorted(chosen.items())],
    )


def write_features_csv(path, rows) -> None:
    names = list(ELA_FEATURE_NAMES) + list(SV_NAMES)
    header = ["fid", "iid", "run", "target"] + names + ["degenerate"]
    out = []
    for r in sorted(rows, key=lambda row: (row.fid, row.iid, row.run)):
        merged = {**r.traj, **r.sv}
        out.append(
            [r.fid, r.iid, r.run, repr(r.target)]
            + [repr(merged[n]) for n in names]
            + [";".join(r.degenerate)]
        )
    _write_csv(path, header, out)


def write_global_csv(path, global_features: dict) -> None:
    header = ["fid", "iid", "size"] + list(ELA_FEATURE_NAMES)
    out = []
    for (fid, iid, size), values in sorted(global_features.items()):
        out.append(
            [fid, iid, size] + [repr(values[n]) for n in ELA_FEATURE_NAMES]
        )
    _write_csv(path, header, out)


def write_predictions_csv(path, records) -> None:
    ordered = sorted(records, key=lambda r: (r.fid, r.iid, r.run))
    _write_csv(
        path,
        ["fid", "iid", "run", "true_precision", "pred_unscaled", "pred_log10"],
        [
            [r.fid, r.iid, r.run, repr(r.true_precision), repr(r.pred_unscaled), repr(r.pred_log10)]
            for r in ordered
        ],
    )
