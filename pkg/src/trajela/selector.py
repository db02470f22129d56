"""Threshold combination of the unscaled and log10 precision models.

The log model is trusted whenever the precision it predicts falls below a
threshold tau, otherwise the unscaled model answers. tau is chosen by grid
search over every value the log model actually predicted (plus 0 and
infinity, which recover the two standalone models), so the combined RMSE can
never be worse than either standalone model.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "PortfolioReport",
    "PredictionRecord",
    "abs_errors_by_function",
    "apply_threshold",
    "combined_predict",
    "evaluate_portfolio",
    "optimize_threshold",
    "rmse",
    "write_report_csv",
]


@dataclass(frozen=True)
class PredictionRecord:
    """One cross-validation prediction for a single (fid, iid, run) row."""

    fid: int
    iid: int
    run: int
    true_precision: float
    pred_unscaled: float
    pred_log10: float
    pred_combined: float = None

    def __post_init__(self):
        for field in ("true_precision", "pred_unscaled", "pred_log10"):
            v = getattr(self, field)
            if not math.isfinite(v):
                raise ValueError(f"{field} must be finite, got {v!r}")
        if self.true_precision < 0:
            raise ValueError("true_precision must be non-negative")


def _exp10(x: float) -> float:
    with np.errstate(over="ignore"):
        return float(np.float64(10.0) ** np.float64(x))


def combined_predict(pred_unscaled: float, pred_log10: float, tau: float) -> float:
    """The log model's precision when strictly below tau, else the raw one."""
    precision = _exp10(pred_log10)
    return precision if precision < tau else pred_unscaled


def apply_threshold(records, tau: float):
    """Fill pred_combined on every record for the given tau."""
    return [
        replace(r, pred_combined=combined_predict(r.pred_unscaled, r.pred_log10, tau))
        for r in records
    ]


def rmse(truths, preds) -> float:
    truths = np.asarray(truths, dtype=float)
    preds = np.asarray(preds, dtype=float)
    if truths.shape != preds.shape or truths.ndim != 1:
        raise ValueError("truths and preds must be equal-length vectors")
    if truths.size == 0:
        raise ValueError("need at least one prediction")
    return float(np.sqrt(np.mean((truths - preds) ** 2)))


def optimize_threshold(records) -> float:
    """Grid-search tau minimizing combined RMSE; ties go to the smallest tau.

    The grid is {0, +inf} plus every distinct precision the log model
    predicted, so both standalone models are always candidate solutions.
    """
    if not records:
        raise ValueError("need at least one prediction record")
    truths = np.array([r.true_precision for r in records])
    unscaled = np.array([r.pred_unscaled for r in records])
    with np.errstate(over="ignore"):
        from_log = 10.0 ** np.array([r.pred_log10 for r in records])

    grid = np.concatenate([[0.0], np.unique(from_log), [np.inf]])
    best_tau, best_score = None, np.inf
    for tau in grid:
        combined = np.where(from_log < tau, from_log, unscaled)
        score = float(np.sqrt(np.mean((truths - combined) ** 2)))
        if score < best_score:
            best_tau, best_score = float(tau), score
    return best_tau


def abs_errors_by_function(records) -> dict:
    """Mean absolute combined error per fid; requires pred_combined set."""
    if not records:
        raise ValueError("need at least one prediction record")
    by_fid = {}
    for r in records:
        if r.pred_combined is None:
            raise ValueError("records carry no combined prediction; apply a tau first")
        by_fid.setdefault(r.fid, []).append(abs(r.true_precision - r.pred_combined))
    return {fid: float(np.mean(errs)) for fid, errs in sorted(by_fid.items())}


@dataclass(frozen=True)
class PortfolioReport:
    tau: float
    rmse_combined: float
    rmse_unscaled: float
    rmse_log: float
    mae_by_fid: dict


def evaluate_portfolio(records, tau=None):
    """Optimize tau (unless given), then score the portfolio.

    Returns (PortfolioReport, records with pred_combined filled).
    """
    if tau is None:
        tau = optimize_threshold(records)
    combined = apply_threshold(records, tau)
    truths = [r.true_precision for r in combined]
    report = PortfolioReport(
        tau=float(tau),
        rmse_combined=rmse(truths, [r.pred_combined for r in combined]),
        rmse_unscaled=rmse(truths, [r.pred_unscaled for r in combined]),
        rmse_log=rmse(truths, [_exp10(r.pred_log10) for r in combined]),
        mae_by_fid=abs_errors_by_function(combined),
    )
    return report, combined


def write_report_csv(path, reports: dict, fids=range(1, 25)) -> None:
    """One column per portfolio; best-tau row, per-fid MAE rows, RMSE rows.

    Portfolios whose report is None (reserved names that were not run) get
    empty cells so the column layout stays comparable across studies.
    """
    names = list(reports)
    rows = [["row"] + names]

    def cell(report, value):
        return "" if report is None else repr(value(report))

    rows.append(["best_tau"] + [cell(reports[n], lambda r: r.tau) for n in names])
    for fid in fids:
        rows.append(
            [f"mae_f{fid}"]
            + [
                cell(reports[n], lambda r, f=fid: r.mae_by_fid.get(f, float("nan")))
                for n in names
            ]
        )
    for label, attr in (
        ("overall_rmse_combined", "rmse_combined"),
        ("overall_rmse_unscaled", "rmse_unscaled"),
        ("overall_rmse_log", "rmse_log"),
    ):
        rows.append(
            [label] + [cell(reports[n], lambda r, a=attr: getattr(r, a)) for n in names]
        )

    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)
