"""Feature portfolio selection.

Two selectors are implemented: an unsupervised correlation filter that
greedily drops one feature of every highly correlated pair, and recursive
feature elimination driven by forest importances with out-of-bag RMSE as the
set score. Per-fold selections are merged by set intersection. The portfolio
registry also reserves names for selectors reported elsewhere but out of
scope here (boruta, swfb), so report columns stay aligned.
"""

from __future__ import annotations

import json
import warnings

import numpy as np

from .forest import TrainingSet, feature_importance, fit, oob_predictions

__all__ = [
    "RESERVED_PORTFOLIOS",
    "correlation_filter",
    "fold_intersection",
    "load_portfolios",
    "recursive_feature_elimination",
    "save_portfolios",
]

# selectors that appear in comparable studies but are not implemented here;
# report columns for them stay empty instead of silently disappearing
RESERVED_PORTFOLIOS = ("boruta", "swfb")


def _abs_correlations(X: np.ndarray) -> np.ndarray:
    """|Pearson correlation| matrix; constant columns correlate with nothing."""
    X = np.asarray(X, dtype=float)
    centered = X - X.mean(axis=0)
    sd = centered.std(axis=0)
    ok = sd > 0
    denom = np.where(ok, sd, 1.0)
    Z = centered / denom
    C = np.abs(Z.T @ Z / X.shape[0])
    C[~ok, :] = 0.0
    C[:, ~ok] = 0.0
    np.fill_diagonal(C, 1.0)
    return C


def correlation_filter(X, names, threshold: float):
    """Greedy decorrelation: drop one of each pair with |cor| > threshold.

    Pairs are visited in feature-name order; of an offending pair, the
    feature with the larger mean absolute correlation to the other surviving
    features is dropped (ties drop the later-listed one). The survivors are
    returned in their input order and no surviving pair exceeds the
    threshold.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie strictly between 0 and 1")
    names = tuple(names)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != len(names):
        raise ValueError("feature matrix must have one column per name")
    if len(names) < 2:
        raise ValueError("need at least 2 features")

    C = _abs_correlations(X)
    alive = list(range(len(names)))
    while True:
        offender = None
        for a, i in enumerate(alive):
            for j in alive[a + 1 :]:
                if C[i, j] > threshold:
                    offender = (i, j)
                    break
            if offender:
                break
        if offender is None:
            break
        i, j = offender
        others = np.array(alive)

        def mean_cor(k):
            return (C[k, others].sum() - 1.0) / max(len(alive) - 1, 1)

        drop = j if mean_cor(j) >= mean_cor(i) else i
        alive.remove(drop)
    return tuple(names[k] for k in alive)


def recursive_feature_elimination(
    data: TrainingSet,
    keep="auto",
    seed: int = 0,
    n_trees: int = 1000,
    transform: str = "raw",
):
    """Drop the least important feature per loop; pick the best-scoring set.

    Every survivor set (including the full one) is scored by out-of-bag RMSE
    of a forest fit on exactly those columns. keep="auto" returns the set
    with the minimal score, ties resolved toward fewer features; an integer
    keep returns the survivor set of that size. Selection order is
    deterministic for a fixed seed.
    """
    p = len(data.feature_names)
    if isinstance(keep, (int, np.integer)):
        if not 1 <= keep <= p:
            raise ValueError(f"keep must be in [1, {p}]")
    elif keep != "auto":
        raise ValueError("keep must be an integer or 'auto'")
    if p < 2:
        raise ValueError("need at least 2 features")

    col_of = {name: k for k, name in enumerate(data.feature_names)}
    current = list(data.feature_names)
    path = []  # (score, survivor tuple), largest set first
    iteration = 0
    while True:
        cols = [col_of[n] for n in current]
        sub = TrainingSet(
            data.features[:, cols],
            data.targets,
            tuple(current),
            data.row_meta,
        )
        fit_seed = int(np.random.SeedSequence([int(seed), iteration]).generate_state(1)[0])
        model = fit(sub, transform, seed=fit_seed, n_trees=n_trees)
        preds, _ = oob_predictions(model, sub.features)
        target = (
            sub.targets
            if transform == "raw"
            else np.log10(np.maximum(sub.targets, 1e-12))
        )
        score = float(np.sqrt(np.mean((preds - target) ** 2)))
        path.append((score, tuple(current)))
        if len(current) == 1:
            break
        imp = feature_importance(model)
        weakest = min(current, key=lambda n: (imp[n], current.index(n)))
        current.remove(weakest)
        iteration += 1

    if keep == "auto":
        best = min(path, key=lambda sp: (sp[0], len(sp[1])))
        return best[1]
    for _, survivors in path:
        if len(survivors) == keep:
            return survivors
    raise AssertionError("unreachable: every size from p down to 1 is visited")


def fold_intersection(per_fold_selections):
    """Names selected by every fold, in sorted order; empty is reported."""
    folds = [frozenset(sel) for sel in per_fold_selections]
    if not folds:
        raise ValueError("need at least one fold selection")
    common = frozenset.intersection(*folds)
    if not common:
        warnings.warn("fold intersection is empty; no feature survived every fold")
    return tuple(sorted(common))


def save_portfolios(path, portfolios: dict) -> None:
    """Write {portfolio_name: [feature names]} as JSON."""
    payload = {name: list(feats) for name, feats in portfolios.items()}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_portfolios(path) -> dict:
    with open(path) as fh:
        payload = json.load(fh)
    if not isinstance(payload, dict):
        raise ValueError("portfolio file must map names to feature lists")
    return {name: tuple(feats) for name, feats in payload.items()}
