"""Random-forest regression built directly on numpy.

Trees are grown CART-style on bootstrap resamples: every feature is a split
candidate at every node, split quality is the reduction in summed squared
error, and nodes expand until they are pure or run out of samples. A forest
prediction is the mean of the per-tree leaf means, so it never leaves the
range of the training targets. The target can be fit raw or as log10 of the
precision, with exact zeros clamped to a documented floor first.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

__all__ = [
    "LOG_FLOOR",
    "TARGET_TRANSFORMS",
    "RandomForestModel",
    "SchemaError",
    "TrainingSet",
    "feature_importance",
    "fit",
    "load_model",
    "oob_predictions",
    "predict_matrix",
    "predict_row",
    "save_model",
]

TARGET_TRANSFORMS = ("raw", "log10")

# precisions of exactly 0 occur (solved instances); log10 needs a floor
LOG_FLOOR = 1e-12


class SchemaError(KeyError):
    """A prediction input does not carry the features the model expects."""


@dataclass(frozen=True)
class TrainingSet:
    """Feature matrix, precision targets, and per-row provenance."""

    features: np.ndarray
    targets: np.ndarray
    feature_names: tuple
    row_meta: tuple = ()

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        y = np.asarray(self.targets, dtype=float)
        if X.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        if y.shape != (X.shape[0],):
            raise ValueError("targets must align with feature rows")
        if not np.all(np.isfinite(X)):
            raise ValueError("non-finite feature value")
        if not np.all(np.isfinite(y)) or np.any(y < 0):
            raise ValueError("targets must be finite and non-negative")
        names = tuple(self.feature_names)
        if len(names) != X.shape[1]:
            raise ValueError("feature_names must match the feature columns")
        meta = tuple(tuple(m) for m in self.row_meta)
        if not meta:
            meta = tuple((0, 0, i) for i in range(X.shape[0]))
        if len(meta) != X.shape[0]:
            raise ValueError("row_meta must have one entry per row")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "targets", y)
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "row_meta", meta)

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class _Tree:
    feature: np.ndarray  # split feature per node, -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    importance: np.ndarray  # normalized SSE decrease per feature
    inbag: np.ndarray  # bool mask over training rows


@dataclass(frozen=True)
class RandomForestModel:
    trees: tuple
    target_transform: str
    seed: int
    feature_names: tuple


def _best_split(X: np.ndarray, y: np.ndarray):
    """Variance-minimizing cut over all features and midpoints.

    Returns (feature, threshold, sse_gain, left_mask) or None when every
    feature is constant on this node. Candidate positions are boundaries
    between strictly increasing sorted values; ties resolve to the smallest
    position, then the smallest feature index.
    """
    n, p = X.shape
    order = np.argsort(X, axis=0, kind="stable")
    Xs = np.take_along_axis(X, order, axis=0)
    ys = y[order]
    cs1 = np.cumsum(ys, axis=0)[:-1]
    cs2 = np.cumsum(ys * ys, axis=0)[:-1]
    tot1 = float(y.sum())
    tot2 = float(y @ y)
    counts = np.arange(1, n, dtype=float)[:, None]
    sse = cs2 - cs1**2 / counts + (tot2 - cs2) - (tot1 - cs1) ** 2 / (n - counts)
    sse[Xs[1:] <= Xs[:-1]] = np.inf
    flat = int(np.argmin(sse))
    pos, feat = divmod(flat, p)
    best = sse[pos, feat]
    if not np.isfinite(best):
        return None
    lo = Xs[pos, feat]
    hi = Xs[pos + 1, feat]
    thr = 0.5 * (lo + hi)
    if thr >= hi:  # adjacent floats: the midpoint can round onto hi
        thr = lo
    parent_sse = tot2 - tot1 * tot1 / n
    gain = max(parent_sse - float(best), 0.0)
    return feat, float(thr), gain, X[:, feat] <= thr


def _grow_tree(X, y, rng, bootstrap, max_depth):
    m, p = X.shape
    if bootstrap:
        rows = rng.integers(0, m, size=m)
        inbag = np.zeros(m, dtype=bool)
        inbag[rows] = True
    else:
        rows = np.arange(m)
        inbag = np.ones(m, dtype=bool)

    feature, threshold, left, right, value = [], [], [], [], []
    imp = np.zeros(p)

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    stack = [(new_node(), rows, 0)]
    while stack:
        node, idx, depth = stack.pop()
        ysub = y[idx]
        value[node] = float(ysub.mean())
        if idx.size < 2 or ysub.max() == ysub.min():
            continue
        if max_depth is not None and depth >= max_depth:
            continue
        split = _best_split(X[idx], ysub)
        if split is None:
            continue
        feat, thr, gain, mask = split
        imp[feat] += gain
        lchild, rchild = new_node(), new_node()
        feature[node] = feat
        threshold[node] = thr
        left[node] = lchild
        right[node] = rchild
        stack.append((rchild, idx[~mask], depth + 1))
        stack.append((lchild, idx[mask], depth + 1))

    total = imp.sum()
    if total > 0:
        imp /= total
    return _Tree(
        feature=np.asarray(feature, dtype=np.int32),
        threshold=np.asarray(threshold, dtype=float),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        value=np.asarray(value, dtype=float),
        importance=imp,
        inbag=inbag,
    )


def _tree_predict(tree: _Tree, X: np.ndarray) -> np.ndarray:
    out = np.empty(X.shape[0])
    feat, thr = tree.feature, tree.threshold
    left, right, value = tree.left, tree.right, tree.value
    for i in range(X.shape[0]):
        node = 0
        while feat[node] >= 0:
            node = left[node] if X[i, feat[node]] <= thr[node] else right[node]
        out[i] = value[node]
    return out


def fit(
    data: TrainingSet,
    transform: str = "raw",
    seed: int = 0,
    n_trees: int = 1000,
    bootstrap: bool = True,
    max_depth=None,
    workers=None,
    log_clamp: float = LOG_FLOOR,
) -> RandomForestModel:
    """Fit an ensemble of CART trees.

    Each tree draws its own bootstrap resample from an RNG stream derived
    from (seed, tree index), so results do not depend on the worker count.
    transform "log10" fits log10(max(target, log_clamp)) and the model then
    predicts in log space.
    """
    if transform not in TARGET_TRANSFORMS:
        raise ValueError(f"unknown target transform {transform!r}")
    if not isinstance(seed, (int, np.integer)) or seed < 0:
        raise ValueError("seed must be a non-negative integer")
    if n_trees < 1:
        raise ValueError("n_trees must be positive")
    m, p = data.features.shape
    if m < 2:
        raise ValueError("need at least 2 training rows")
    if p < 1:
        raise ValueError("need at least 1 feature")

    X = data.features
    if transform == "log10":
        y = np.log10(np.maximum(data.targets, log_clamp))
    else:
        y = data.targets

    def one(k):
        rng = np.random.default_rng([int(seed), int(k)])
        return _grow_tree(X, y, rng, bootstrap, max_depth)

    if workers is not None and workers > 1:
        with ThreadPoolExecutor(max_workers=int(workers)) as pool:
            trees = tuple(pool.map(one, range(n_trees)))
    else:
        trees = tuple(one(k) for k in range(n_trees))
    return RandomForestModel(
        trees=trees,
        target_transform=transform,
        seed=int(seed),
        feature_names=data.feature_names,
    )


def predict_matrix(model: RandomForestModel, X) -> np.ndarray:
    """Mean tree prediction for rows whose columns follow model.feature_names."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != len(model.feature_names):
        raise SchemaError(
            f"expected {len(model.feature_names)} feature columns, got shape {X.shape}"
        )
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite feature value")
    acc = np.zeros(X.shape[0])
    for tree in model.trees:
        acc += _tree_predict(tree, X)
    return acc / len(model.trees)


def predict_row(model: RandomForestModel, row) -> float:
    """Predict one observation given as a name->value mapping or a vector."""
    if isinstance(row, dict):
        try:
            x = np.array([float(row[name]) for name in model.feature_names])
        except KeyError as exc:
            raise SchemaError(f"missing feature {exc.args[0]!r}") from None
    else:
        x = np.asarray(row, dtype=float)
        if x.shape != (len(model.feature_names),):
            raise SchemaError(
                f"expected {len(model.feature_names)} features, got shape {x.shape}"
            )
    return float(predict_matrix(model, x[None, :])[0])


def oob_predictions(model: RandomForestModel, X):
    """Out-of-bag predictions over the matrix the model was trained on.

    Row i is averaged over the trees whose bootstrap missed row i. Rows that
    every tree saw (vanishingly rare past a few dozen trees) fall back to the
    full-forest prediction. Returns (predictions, oob_tree_counts).
    """
    X = np.asarray(X, dtype=float)
    acc = np.zeros(X.shape[0])
    cnt = np.zeros(X.shape[0])
    for tree in model.trees:
        if tree.inbag.shape[0] != X.shape[0]:
            raise ValueError("out-of-bag scoring needs the original training matrix")
        oob = ~tree.inbag
        if oob.any():
            acc[oob] += _tree_predict(tree, X[oob])
            cnt[oob] += 1
    preds = np.divide(acc, cnt, out=np.zeros_like(acc), where=cnt > 0)
    never = cnt == 0
    if never.any():
        preds[never] = predict_matrix(model, X[never])
    return preds, cnt


def feature_importance(model: RandomForestModel) -> dict:
    """Mean decrease in impurity per feature, normalized to sum to 1."""
    imp = np.mean([tree.importance for tree in model.trees], axis=0)
    total = imp.sum()
    if total > 0:
        imp = imp / total
    return {name: float(v) for name, v in zip(model.feature_names, imp)}


_FORMAT = "trajela-forest"
_VERSION = 1


def save_model(model: RandomForestModel, path) -> None:
    """Write the model to a versioned .npz archive."""
    meta = {
        "format": _FORMAT,
        "version": _VERSION,
        "target_transform": model.target_transform,
        "seed": model.seed,
        "feature_names": list(model.feature_names),
    }
    trees = model.trees
    np.savez_compressed(
        path,
        meta=np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8),
        node_counts=np.array([t.feature.size for t in trees], dtype=np.int64),
        feature=np.concatenate([t.feature for t in trees]),
        threshold=np.concatenate([t.threshold for t in trees]),
        left=np.concatenate([t.left for t in trees]),
        right=np.concatenate([t.right for t in trees]),
        value=np.concatenate([t.value for t in trees]),
        importance=np.stack([t.importance for t in trees]),
        inbag=np.stack([t.inbag for t in trees]),
    )


def load_model(path) -> RandomForestModel:
    with np.load(path) as archive:
        meta = json.loads(bytes(archive["meta"]).decode("utf-8"))
        if meta.get("format") != _FORMAT or meta.get("version") != _VERSION:
            raise ValueError(f"unsupported model file: {meta!r}")
        counts = archive["node_counts"]
        offsets = np.concatenate([[0], np.cumsum(counts)])
        trees = []
        for k in range(counts.size):
            lo, hi = offsets[k], offsets[k + 1]
            trees.append(
                _Tree(
                    feature=archive["feature"][lo:hi],
                    threshold=archive["threshold"][lo:hi],
                    left=archive["left"][lo:hi],
                    right=archive["right"][lo:hi],
                    value=archive["value"][lo:hi],
                    importance=archive["importance"][k],
                    inbag=archive["inbag"][k],
                )
            )
    return RandomForestModel(
        trees=tuple(trees),
        target_transform=meta["target_transform"],
        seed=int(meta["seed"]),
        feature_names=tuple(meta["feature_names"]),
    )
