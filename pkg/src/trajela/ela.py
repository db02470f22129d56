"""Landscape features from evaluated sample points.

Five feature groups, 38 features total: y-distribution (3), meta-model
fits (9), dispersion (16), nearest-better clustering (5), and
information content (5). All groups work on a fixed sample; nothing
here evaluates the objective function.

Degenerate inputs (constant fitness, coincident points, single-point
quantile subsets) produce fixed finite fallback values instead of NaN:
0 for correlations and entropies, 1 for ratios. The affected feature
names are reported in the feature vector's `degenerate` set so
downstream consumers can tell a real value from a fallback.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist, squareform

ELA_FEATURE_NAMES = (
    "ela_distr.skewness",
    "ela_distr.kurtosis",
    "ela_distr.number_of_peaks",
    "ela_meta.lin_simple.adj_r2",
    "ela_meta.lin_simple.intercept",
    "ela_meta.lin_simple.coef.min",
    "ela_meta.lin_simple.coef.max",
    "ela_meta.lin_simple.coef.max_by_min",
    "ela_meta.lin_w_interact.adj_r2",
    "ela_meta.quad_simple.adj_r2",
    "ela_meta.quad_simple.cond",
    "ela_meta.quad_w_interact.adj_r2",
    "disp.ratio_mean_02",
    "disp.ratio_mean_05",
    "disp.ratio_mean_10",
    "disp.ratio_mean_25",
    "disp.ratio_median_02",
    "disp.ratio_median_05",
    "disp.ratio_median_10",
    "disp.ratio_median_25",
    "disp.diff_mean_02",
    "disp.diff_mean_05",
    "disp.diff_mean_10",
    "disp.diff_mean_25",
    "disp.diff_median_02",
    "disp.diff_median_05",
    "disp.diff_median_10",
    "disp.diff_median_25",
    "nbc.nn_nb.sd_ratio",
    "nbc.nn_nb.mean_ratio",
    "nbc.nn_nb.cor",
    "nbc.dist_ratio.coeff_var",
    "nbc.nb_fitness.cor",
    "ic.h.max",
    "ic.eps.s",
    "ic.eps.max",
    "ic.eps.ratio",
    "ic.m0",
)

PROVENANCES = ("trajectory", "global250", "global2000")

_DISP_QUANTILES = ((0.02, "02"), (0.05, "05"), (0.10, "10"), (0.25, "25"))
_IC_EXPONENTS = np.linspace(-5.0, 15.0, 1000)
_IC_EPS_GRID = 10.0**_IC_EXPONENTS
_IC_SETTLE = 0.05
_IC_RATIO = 0.5
_MIN_SAMPLES = 30


class DegenerateSampleError(ValueError):
    """Sample violates a hard precondition (size, dimensions, finiteness)."""


@dataclass(frozen=True)
class SampleSet:
    """Evaluated points. The experiment pipeline always passes n >= 30;
    the individual feature groups only need their own minimums, which
    keeps them usable on small hand-checkable inputs."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise DegenerateSampleError(
                f"need X (n, d) and y (n,), got {X.shape} and {y.shape}"
            )
        if X.shape[0] < 2 or X.shape[1] < 1:
            raise DegenerateSampleError(f"need at least 2 points, got {X.shape}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise DegenerateSampleError("non-finite entries in sample")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class FeatureVector:
    values: dict
    degenerate: frozenset
    provenance: str
    fid: int | None = None
    iid: int | None = None
    run: int | None = None


def _flag(flags, *names):
    if flags is not None:
        flags.update(names)


# ------------------------------------------------------------ y-distribution


def _silverman_bandwidth(y: np.ndarray) -> float:
    # R's bw.nrd0: 0.9 * min(sd, IQR/1.34) * n^(-1/5), with zero fallbacks
    n = len(y)
    sd = float(np.std(y, ddof=1))
    q75, q25 = np.percentile(y, [75, 25])
    lo = min(sd, (q75 - q25) / 1.349)
    if lo == 0.0:
        lo = sd or abs(float(y[0])) or 1.0
    return 0.9 * lo * n ** (-0.2)


def _kde_peak_count(y: np.ndarray) -> int:
    bw = _silverman_bandwidth(y)
    grid = np.linspace(y.min() - 3.0 * bw, y.max() + 3.0 * bw, 512)
    z = (grid[:, None] - y[None, :]) / bw
    dens = np.exp(-0.5 * z**2).sum(axis=1)  # unnormalized is enough for masses
    interior = (dens[1:-1] > dens[:-2]) & (dens[1:-1] > dens[2:])
    maxima = np.flatnonzero(interior) + 1
    if len(maxima) <= 1:
        return 1
    # basin boundaries: minimum between consecutive maxima
    bounds = [0]
    for a, b in zip(maxima[:-1], maxima[1:]):
        bounds.append(a + int(np.argmin(dens[a : b + 1])))
    bounds.append(len(dens))
    total = dens.sum()
    peaks = 0
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        if dens[lo:hi].sum() / total >= 0.01:
            peaks += 1
    return max(peaks, 1)


def ela_distr(s: SampleSet, flags: set | None = None) -> dict:
    y = s.y
    centered = y - y.mean()
    m2 = float(np.mean(centered**2))
    if m2 == 0.0:
        _flag(flags, "ela_distr.skewness", "ela_distr.kurtosis")
        return {
            "ela_distr.skewness": 0.0,
            "ela_distr.kurtosis": 0.0,
            "ela_distr.number_of_peaks": 1,
        }
    m3 = float(np.mean(centered**3))
    m4 = float(np.mean(centered**4))
    return {
        "ela_distr.skewness": m3 / m2**1.5,
        "ela_distr.kurtosis": m4 / m2**2 - 3.0,
        "ela_distr.number_of_peaks": _kde_peak_count(y),
    }


# ---------------------------------------------------------------- meta-model


def _interactions(X: np.ndarray) -> np.ndarray:
    n, d = X.shape
    cols = [X[:, i] * X[:, j] for i in range(d) for j in range(i + 1, d)]
    return np.column_stack(cols) if cols else np.empty((n, 0))


def _fit(y: np.ndarray, design: np.ndarray, flags, name: str) -> tuple[np.ndarray, float]:
    """OLS via pseudoinverse; returns (coefficients, adjusted R^2)."""
    n = len(y)
    p = design.shape[1] - 1  # predictors excluding intercept
    coef, _, _, _ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    ss_res = float(resid @ resid)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        _flag(flags, name)
        r2 = 1.0
    elif ss_res <= 1e-12 * ss_tot:
        r2 = 1.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    if n - p - 1 <= 0:
        _flag(flags, name)
        return coef, r2
    return coef, 1.0 - (1.0 - r2) * (n - 1) / (n - p - 1)


def _bounded_ratio(hi: float, lo: float, flags, name: str) -> float:
    if hi == 0.0:
        _flag(flags, name)
        return 1.0
    if lo <= 1e-12 * hi:
        _flag(flags, name)
        return 1e12
    return hi / lo


def ela_meta(s: SampleSet, flags: set | None = None) -> dict:
    X, y = s.X, s.y
    n = s.n
    ones = np.ones((n, 1))
    inter = _interactions(X)

    lin_coef, lin_adj = _fit(y, np.hstack([ones, X]), flags, "ela_meta.lin_simple.adj_r2")
    _, lin_int_adj = _fit(
        y, np.hstack([ones, X, inter]), flags, "ela_meta.lin_w_interact.adj_r2"
    )
    quad_coef, quad_adj = _fit(
        y, np.hstack([ones, X, X**2]), flags, "ela_meta.quad_simple.adj_r2"
    )
    _, full_adj = _fit(
        y, np.hstack([ones, X, X**2, inter]), flags, "ela_meta.quad_w_interact.adj_r2"
    )

    lin_abs = np.abs(lin_coef[1:])
    quad_abs = np.abs(quad_coef[1 + s.dim :])
    return {
        "ela_meta.lin_simple.adj_r2": lin_adj,
        "ela_meta.lin_simple.intercept": float(lin_coef[0]),
        "ela_meta.lin_simple.coef.min": float(lin_abs.min()),
        "ela_meta.lin_simple.coef.max": float(lin_abs.max()),
        "ela_meta.lin_simple.coef.max_by_min": _bounded_ratio(
            float(lin_abs.max()), float(lin_abs.min()), flags,
            "ela_meta.lin_simple.coef.max_by_min",
        ),
        "ela_meta.lin_w_interact.adj_r2": lin_int_adj,
        "ela_meta.quad_simple.adj_r2": quad_adj,
        "ela_meta.quad_simple.cond": _bounded_ratio(
            float(quad_abs.max()), float(quad_abs.min()), flags,
            "ela_meta.quad_simple.cond",
        ),
        "ela_meta.quad_w_interact.adj_r2": full_adj,
    }


# ---------------------------------------------------------------- dispersion


def dispersion(s: SampleSet, flags: set | None = None, dist: np.ndarray | None = None) -> dict:
    full = squareform(dist, checks=False) if dist is not None else pdist(s.X)
    mean_all = float(full.mean())
    median_all = float(np.median(full))
    order = np.argsort(s.y, kind="stable")

    out = {}
    for q, tag in _DISP_QUANTILES:
        k = math.ceil(q * s.n)
        idx = order[:k]
        if k == 1:
            sub_mean = sub_median = 0.0  # single-point subset has no spread
        else:
            sub = pdist(s.X[idx])
            sub_mean = float(sub.mean())
            sub_median = float(np.median(sub))
        if mean_all == 0.0:
            _flag(flags, *(f"disp.{kind}_{tag}" for kind in
                           ("ratio_mean", "ratio_median", "diff_mean", "diff_median")))
            out[f"disp.ratio_mean_{tag}"] = 1.0
            out[f"disp.ratio_median_{tag}"] = 1.0
            out[f"disp.diff_mean_{tag}"] = 0.0
            out[f"disp.diff_median_{tag}"] = 0.0
        else:
            out[f"disp.ratio_mean_{tag}"] = sub_mean / mean_all
            if median_all > 0.0:
                out[f"disp.ratio_median_{tag}"] = sub_median / median_all
            else:
                _flag(flags, f"disp.ratio_median_{tag}")
                out[f"disp.ratio_median_{tag}"] = 1.0
            out[f"disp.diff_mean_{tag}"] = sub_mean - mean_all
            out[f"disp.diff_median_{tag}"] = sub_median - median_all
    return out


# ------------------------------------------------------- nearest-better


def _pearson(a: np.ndarray, b: np.ndarray, flags, name: str) -> float:
    if len(a) < 2 or np.std(a) == 0.0 or np.std(b) == 0.0:
        _flag(flags, name)
        return 0.0
    return float(np.corrcoef(a, b)[0, 1])


def nearest_better(s: SampleSet, flags: set | None = None, dist: np.ndarray | None = None) -> dict:
    X, y = s.X, s.y
    n = s.n
    D = dist if dist is not None else squareform(pdist(X))
    D = D.copy()
    np.fill_diagonal(D, np.inf)
    nn = D.min(axis=1)

    defined = y > y.min()
    names = (
        "nbc.nn_nb.sd_ratio",
        "nbc.nn_nb.mean_ratio",
        "nbc.nn_nb.cor",
        "nbc.dist_ratio.coeff_var",
        "nbc.nb_fitness.cor",
    )
    if not np.any(defined):
        _flag(flags, *names)
        return dict(zip(names, (1.0, 1.0, 0.0, 0.0, 0.0)))

    better = y[None, :] < y[:, None]
    D_better = np.where(better, D, np.inf)
    nb = D_better.min(axis=1)
    nb_target = D_better.argmin(axis=1)  # ties resolve to the lowest index

    nn_d = nn[defined]
    nb_d = nb[defined]

    sd_nn = float(np.std(nn_d, ddof=1)) if len(nn_d) > 1 else 0.0
    sd_nb = float(np.std(nb_d, ddof=1)) if len(nb_d) > 1 else 0.0
    if sd_nb == 0.0:
        _flag(flags, "nbc.nn_nb.sd_ratio")
        sd_ratio = 1.0
    else:
        sd_ratio = sd_nn / sd_nb

    mean_nb = float(nb_d.mean())
    if mean_nb == 0.0:
        _flag(flags, "nbc.nn_nb.mean_ratio")
        mean_ratio = 1.0
    else:
        mean_ratio = float(nn_d.mean()) / mean_nb

    cor = _pearson(nn_d, nb_d, flags, "nbc.nn_nb.cor")

    ok = nn_d > 0.0
    if not np.all(ok):
        _flag(flags, "nbc.dist_ratio.coeff_var")
    r = nb_d[ok] / nn_d[ok]
    if len(r) < 2 or float(r.mean()) == 0.0:
        _flag(flags, "nbc.dist_ratio.coeff_var")
        coeff_var = 0.0
    else:
        coeff_var = float(np.std(r, ddof=1)) / float(r.mean())

    indegree = np.zeros(n)
    np.add.at(indegree, nb_target[defined], 1.0)
    fitness_cor = _pearson(indegree, y, flags, "nbc.nb_fitness.cor")

    return dict(zip(names, (sd_ratio, mean_ratio, cor, coeff_var, fitness_cor)))


# --------------------------------------------------- information content


def _nn_tour(D: np.ndarray) -> np.ndarray:
    n = D.shape[0]
    D = D.copy()
    np.fill_diagonal(D, np.inf)
    order = np.empty(n, dtype=int)
    order[0] = 0
    visited = np.zeros(n, dtype=bool)
    visited[0] = True
    current = 0
    for k in range(1, n):
        row = np.where(visited, np.inf, D[current])
        current = int(np.argmin(row))  # ties resolve to the lowest index
        order[k] = current
        visited[current] = True
    return order


def _pair_entropy(symbols: np.ndarray) -> np.ndarray:
    """H per row of a (rows, m) symbol matrix with values in {-1, 0, 1}."""
    rows, m = symbols.shape
    if m < 2:
        return np.zeros(rows)
    a = symbols[:, :-1] + 1
    b = symbols[:, 1:] + 1
    codes = (3 * a + b) + 9 * np.arange(rows)[:, None]
    counts = np.bincount(codes.ravel(), minlength=9 * rows).reshape(rows, 9)
    p = counts / (m - 1)
    off_diag = [1, 2, 3, 5, 6, 7]  # cells with differing symbols
    p = p[:, off_diag]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p) / np.log(6.0), 0.0)
    return -terms.sum(axis=1)


def _collapsed_length(symbols: np.ndarray) -> int:
    t = symbols[symbols != 0]
    if len(t) == 0:
        return 0
    return 1 + int(np.sum(t[1:] != t[:-1]))


def information_content(
    s: SampleSet, flags: set | None = None, dist: np.ndarray | None = None
) -> dict:
    names = ("ic.h.max", "ic.eps.s", "ic.eps.max", "ic.eps.ratio", "ic.m0")

    # canonical order (y, then original index) makes the tour start and the
    # features independent of input permutation
    order = np.lexsort((np.arange(s.n), s.y))
    Xc = s.X[order]
    yc = s.y[order]

    # aggregate coincident points, keeping the first (= best y) occurrence
    _, first = np.unique(Xc, axis=0, return_index=True)
    keep = np.sort(first)
    Xc, yc = Xc[keep], yc[keep]
    m = len(yc)

    sd = float(np.std(yc))
    if m < 3 or sd == 0.0:
        _flag(flags, *names)
        return dict(zip(names, (0.0, -5.0, 0.0, 15.0, 0.0)))
    yn = (yc - yc.mean()) / sd  # slopes invariant under affine fitness scaling

    if dist is not None:
        D = dist[order][:, order][keep][:, keep]
    else:
        D = squareform(pdist(Xc))
    tour = _nn_tour(D)
    steps = D[tour[:-1], tour[1:]]
    slopes = np.diff(yn[tour]) / steps

    sym0 = np.sign(slopes).astype(np.int8)[None, :]
    grid_syms = np.where(
        slopes[None, :] > _IC_EPS_GRID[:, None], 1,
        np.where(slopes[None, :] < -_IC_EPS_GRID[:, None], -1, 0),
    ).astype(np.int8)
    H = np.concatenate([_pair_entropy(sym0), _pair_entropy(grid_syms)])

    best = int(np.argmax(H))
    h_max = float(H[best])
    eps_max = 0.0 if best == 0 else float(_IC_EPS_GRID[best - 1])

    H_pos = H[1:]
    settled = np.flatnonzero(H_pos < _IC_SETTLE)
    if len(settled):
        eps_s = float(_IC_EXPONENTS[settled[0]])
    else:
        _flag(flags, "ic.eps.s")
        eps_s = 15.0

    if h_max > 0.0:
        halved = np.flatnonzero(H_pos < _IC_RATIO * h_max)
    else:
        halved = np.array([], dtype=int)
    if len(halved):
        eps_ratio = float(_IC_EXPONENTS[halved[0]])
    else:
        _flag(flags, "ic.eps.ratio")
        eps_ratio = 15.0

    m0 = _collapsed_length(sym0[0]) / (m - 1)
    return dict(zip(names, (h_max, eps_s, eps_max, eps_ratio, m0)))


# ------------------------------------------------------------- aggregation


def compute_all(
    s: SampleSet,
    provenance: str = "trajectory",
    fid: int | None = None,
    iid: int | None = None,
    run: int | None = None,
) -> FeatureVector:
    """All 38 features of one sample set, sharing one distance matrix."""
    if provenance not in PROVENANCES:
        raise ValueError(f"provenance must be one of {PROVENANCES}, got {provenance!r}")
    if s.n < _MIN_SAMPLES:
        raise DegenerateSampleError(
            f"need at least {_MIN_SAMPLES} samples for the full feature set, got {s.n}"
        )
    flags: set = set()
    D = squareform(pdist(s.X))
    values = {}
    values.update(ela_distr(s, flags))
    values.update(ela_meta(s, flags))
    values.update(dispersion(s, flags, dist=D))
    values.update(nearest_better(s, flags, dist=D))
    values.update(information_content(s, flags, dist=D))
    ordered = {name: float(values[name]) for name in ELA_FEATURE_NAMES}
    return FeatureVector(
        values=ordered,
        degenerate=frozenset(flags),
        provenance=provenance,
        fid=fid,
        iid=iid,
        run=run,
    )
