"""Acceptance checks, one test per criterion.

Run with `pytest tests/test_acceptance.py -v` to get one pass/fail line per
criterion. Criterion 3 executes the full median-mode pipeline and dominates
the suite's runtime (roughly half an hour single-threaded).

Criterion 1 is a known-red bar: plain cumulative-step-size CMA-ES started
from a uniform point in [-4, 4]^5 with sigma 2.0 reaches sphere precision
~1e-4 after 500 evaluations and needs ~700 evaluations for 1e-6. The test
states the 1e-6 bar and fails honestly; the measured gap and the published
two-decimal rounding that motivated the stricter bar are documented in the
project notes. The companion check in test_cma.py asserts the bar the
published table actually evidences (precision < 0.005 for every run).
"""

import dataclasses
import math
import time

import numpy as np
import pytest
from scipy.spatial.distance import pdist

from trajela import bbob, cma
from trajela.ela import (
    ELA_FEATURE_NAMES,
    SampleSet,
    compute_all,
    dispersion,
    ela_distr,
    ela_meta,
    information_content,
    nearest_better,
)
from trajela.forest import TrainingSet, fit, predict_matrix
from trajela.harness import (
    ExperimentConfig,
    audit_folds,
    build_rows,
    compute_global_features,
    loio_folds,
    portfolio_spec,
    run_trajectories,
    train_and_evaluate,
    write_features_csv,
    write_global_csv,
    write_precisions_csv,
    write_predictions_csv,
)
from trajela.selector import write_report_csv


# ------------------------------------------------------------ criterion 1


def test_criterion_1_sphere_convergence_to_1e6():
    """20 seeded runs on the sphere must all reach precision 1e-6 in 500 evals."""
    t0 = time.perf_counter()
    inst = bbob.make_instance(1, 1, 5)
    precisions = []
    for run in range(20):
        seed = np.random.SeedSequence([0, 101, 1, 1, run])
        traj, _ = cma.run(inst, 500, seed, snapshot_at=250)
        precisions.append(traj.precision_at_budget)
    elapsed = time.perf_counter() - t0
    assert elapsed < 10.0, f"20 sphere runs took {elapsed:.1f}s"
    worst = max(precisions)
    assert worst <= 1e-6, (
        f"worst-of-20 sphere precision {worst:.3e} misses the 1e-6 bar; "
        "plain CSA CMA-ES needs ~700 evaluations for 1e-6 from this "
        "initialization (see notes); every run does satisfy the published "
        "table's two-decimal bar of < 0.005"
    )


# ------------------------------------------------------------ criterion 2

DESK = ExperimentConfig(
    fids=(1, 2, 8, 12, 21),
    iids=(1, 2, 3),
    runs_per_instance=5,
    budget=160,
    snapshot_at=80,
    trajectory_prefix=80,
    global_sample_sizes=(250,),
    global_repetitions=5,
    cv_folds=3,
    n_trees=60,
    model_repeats=3,
    master_seed=0,
)


@pytest.fixture(scope="module")
def desk_scale():
    results = run_trajectories(DESK)
    glob = compute_global_features(DESK)
    rows = build_rows(DESK, results, glob)
    return results, glob, rows


def test_criterion_2_combined_dominance_end_to_end(desk_scale):
    """Combined RMSE never exceeds either standalone model, for any portfolio."""
    _, _, rows = desk_scale
    for name in ("SV", "ELA", "ELA+SV", "GLOB250", "GLOB250+SV"):
        report, _ = train_and_evaluate(DESK, rows, portfolio_spec(name), name=name)
        assert report.rmse_combined <= report.rmse_unscaled + 1e-12, name
        assert report.rmse_combined <= report.rmse_log + 1e-12, name


# ------------------------------------------------------------ criterion 3


@pytest.fixture(scope="module")
def full_scale():
    """The complete median-mode experiment: 24 fids x 5 iids x 20 runs."""
    cfg = ExperimentConfig(global_sample_sizes=(2000,), master_seed=0)
    t0 = time.perf_counter()
    results = run_trajectories(cfg)
    glob = compute_global_features(cfg)
    rows = build_rows(cfg, results, glob)
    reports = {}
    for name in ("ELA+SV", "GLOB2k"):
        report, _ = train_and_evaluate(cfg, rows, portfolio_spec(name), name=name)
        reports[name] = report
    elapsed = time.perf_counter() - t0
    return reports, elapsed


def _per_fid_aggregate(report):
    # the reference results table aggregates per-function MAEs before the
    # final square/mean/root, which downweights the handful of rows that
    # dominate a plain per-row RMSE
    maes = np.array(list(report.mae_by_fid.values()))
    return float(np.sqrt(np.mean(maes**2)))


def test_criterion_3_full_pipeline_ballpark(full_scale):
    """ELA+SV combined RMSE in [4, 25]; global baseline no worse than +3.

    Known red: the band was calibrated on results produced by a CMA-ES
    with active (negative-weight) covariance updates. This package pins
    positive recombination weights, which adapts ill-conditioned
    functions (ellipsoid, discus, bent cigar) roughly 10x slower at a
    500-evaluation budget, so those target precisions are ~5-30x larger
    and the regression errors scale with them. Within-function spread
    across instances alone puts a floor near RMSE 80 on these targets,
    so no model tuning can reach the band; see the notes for the full
    measurement (an active-weight variant lands near the calibrated
    range, confirming the gap is the pinned design, not a defect).
    """
    reports, elapsed = full_scale
    ela_sv = reports["ELA+SV"].rmse_combined
    glob2k = reports["GLOB2k"].rmse_combined
    assert elapsed < 3600.0, f"pipeline took {elapsed:.0f}s"
    assert glob2k <= ela_sv + 3.0, (
        f"GLOB2k combined RMSE {glob2k:.3f} vs ELA+SV {ela_sv:.3f}"
    )
    assert 4.0 <= ela_sv <= 25.0, (
        f"ELA+SV combined RMSE {ela_sv:.3f} outside [4, 25] "
        f"(per-fid-aggregated form: ELA+SV "
        f"{_per_fid_aggregate(reports['ELA+SV']):.2f}, GLOB2k "
        f"{_per_fid_aggregate(reports['GLOB2k']):.2f}); targets on the "
        "ill-conditioned quadratics are ~5-30x the calibration values "
        "because recombination weights are pinned positive (no active "
        "covariance update); see notes for the variant comparison"
    )


# ------------------------------------------------------------ criterion 4


def _random_sample(rng, n=40, d=3):
    return SampleSet(rng.uniform(-5, 5, size=(n, d)), rng.normal(size=n))


def _check_distr_oracle(rng):
    y = rng.gamma(2.0, size=200)
    out = ela_distr(SampleSet(np.arange(200.0)[:, None], y))
    m = y - y.mean()
    assert abs(out["ela_distr.skewness"] - np.mean(m**3) / np.mean(m**2) ** 1.5) < 1e-9
    assert abs(out["ela_distr.kurtosis"] - (np.mean(m**4) / np.mean(m**2) ** 2 - 3)) < 1e-9


def _check_meta_oracle(rng):
    s = _random_sample(rng, n=60)
    out = ela_meta(s)
    design = np.hstack([np.ones((60, 1)), s.X])
    coef = np.linalg.pinv(design) @ s.y
    resid = s.y - design @ coef
    r2 = 1 - (resid @ resid) / np.sum((s.y - s.y.mean()) ** 2)
    adj = 1 - (1 - r2) * 59 / (60 - 3 - 1)
    assert abs(out["ela_meta.lin_simple.adj_r2"] - adj) < 1e-9


def _check_disp_oracle(rng):
    s = _random_sample(rng, n=45)
    out = dispersion(s)
    order = np.argsort(s.y, kind="stable")
    all_mean = pdist(s.X).mean()
    for q, tag in ((0.02, "02"), (0.05, "05"), (0.10, "10"), (0.25, "25")):
        k = math.ceil(q * 45)
        sub = s.X[order[:k]]
        sub_mean = pdist(sub).mean() if k > 1 else 0.0
        assert abs(out[f"disp.ratio_mean_{tag}"] - sub_mean / all_mean) < 1e-9


def _check_nbc_oracle(rng):
    s = _random_sample(rng, n=40)
    out = nearest_better(s)
    n = 40
    nn = np.empty(n)
    nb = np.full(n, np.nan)
    tgt = np.full(n, -1)
    for i in range(n):
        d = [np.linalg.norm(s.X[i] - s.X[j]) if j != i else np.inf for j in range(n)]
        nn[i] = min(d)
        better = [(d[j], j) for j in range(n) if s.y[j] < s.y[i]]
        if better:
            nb[i], tgt[i] = min(better)
    m = ~np.isnan(nb)
    r = nb[m] / nn[m]
    indeg = np.zeros(n)
    for t in tgt[tgt >= 0]:
        indeg[t] += 1
    assert abs(out["nbc.nn_nb.sd_ratio"] - np.std(nn[m], ddof=1) / np.std(nb[m], ddof=1)) < 1e-9
    assert abs(out["nbc.nn_nb.mean_ratio"] - nn[m].mean() / nb[m].mean()) < 1e-9
    assert abs(out["nbc.nn_nb.cor"] - np.corrcoef(nn[m], nb[m])[0, 1]) < 1e-9
    assert abs(out["nbc.dist_ratio.coeff_var"] - np.std(r, ddof=1) / r.mean()) < 1e-9
    assert abs(out["nbc.nb_fitness.cor"] - np.corrcoef(indeg, s.y)[0, 1]) < 1e-9


def _check_ic_oracle(rng):
    s = _random_sample(rng, n=12, d=2)
    out = information_content(s)
    order = np.lexsort((np.arange(12), s.y))
    Xc, yc = s.X[order], s.y[order]
    yn = (yc - yc.mean()) / np.std(yc)
    tour = [0]
    while len(tour) < 12:
        cur = tour[-1]
        cand = [(np.linalg.norm(Xc[j] - Xc[cur]), j) for j in range(12) if j not in tour]
        tour.append(min(cand)[1])
    slopes = [
        (yn[b] - yn[a]) / np.linalg.norm(Xc[b] - Xc[a])
        for a, b in zip(tour[:-1], tour[1:])
    ]

    def entropy(eps):
        sym = [1 if g > eps else (-1 if g < -eps else 0) for g in slopes]
        pairs = list(zip(sym[:-1], sym[1:]))
        h = 0.0
        for a in (-1, 0, 1):
            for b in (-1, 0, 1):
                if a != b:
                    p = sum(1 for q in pairs if q == (a, b)) / len(pairs)
                    if p > 0:
                        h -= p * math.log(p, 6)
        return h

    grid = [0.0] + list(10 ** np.linspace(-5, 15, 1000))
    assert abs(out["ic.h.max"] - max(entropy(e) for e in grid)) < 1e-9


_AFFINE_INVARIANT = [
    "ela_distr.skewness", "ela_distr.kurtosis", "ela_distr.number_of_peaks",
    "ela_meta.lin_simple.adj_r2", "ela_meta.lin_simple.coef.max_by_min",
    "ela_meta.lin_w_interact.adj_r2", "ela_meta.quad_simple.adj_r2",
    "ela_meta.quad_simple.cond", "ela_meta.quad_w_interact.adj_r2",
    "disp.ratio_mean_02", "disp.ratio_mean_05", "disp.ratio_mean_10",
    "disp.ratio_mean_25", "disp.ratio_median_02", "disp.ratio_median_05",
    "disp.ratio_median_10", "disp.ratio_median_25",
    "nbc.nn_nb.sd_ratio", "nbc.nn_nb.mean_ratio", "nbc.nn_nb.cor",
    "nbc.dist_ratio.coeff_var", "nbc.nb_fitness.cor",
    "ic.h.max", "ic.eps.s", "ic.eps.max", "ic.eps.ratio", "ic.m0",
]


def test_criterion_4_feature_oracles_and_invariances():
    """Brute-force oracles within 1e-9; invariances on 100 random sets."""
    rng = np.random.default_rng(42)
    _check_distr_oracle(rng)
    _check_meta_oracle(rng)
    _check_disp_oracle(rng)
    _check_nbc_oracle(rng)
    _check_ic_oracle(rng)

    for _ in range(100):
        s = _random_sample(rng)
        a = float(rng.uniform(0.1, 10.0))
        b = float(rng.uniform(-5.0, 5.0))
        shift = rng.uniform(-3.0, 3.0, size=3)
        base = compute_all(s)
        scaled = compute_all(SampleSet(s.X, a * s.y + b))
        moved = compute_all(SampleSet(s.X + shift, s.y))
        for name in _AFFINE_INVARIANT:
            assert scaled.values[name] == pytest.approx(
                base.values[name], rel=1e-9, abs=1e-9
            ), f"affine: {name}"
        for name in ELA_FEATURE_NAMES:
            if name == "ela_meta.lin_simple.intercept":
                continue
            assert moved.values[name] == pytest.approx(
                base.values[name], rel=1e-7, abs=1e-7
            ), f"translation: {name}"


# ------------------------------------------------------------ criterion 5


def test_criterion_5_information_content_analytics():
    """Alternating slopes give H(0) = log_6 2; constant y collapses to zero."""
    n = 32
    X = np.arange(1.0, n + 1.0)[:, None]
    out = information_content(SampleSet(X, np.tile([0.0, 1.0], n // 2)))
    assert out["ic.h.max"] == pytest.approx(math.log(2) / math.log(6), abs=1e-9)

    flat = information_content(SampleSet(X, np.zeros(n)))
    assert flat["ic.h.max"] == 0.0
    assert flat["ic.m0"] == 0.0


# ------------------------------------------------------------ criterion 6


def test_criterion_6_forest_oracles():
    """Stump splits match exhaustive search; memorization; range bound."""
    rng = np.random.default_rng(7)
    for _ in range(50):
        x = rng.uniform(-5, 5, size=25)
        y = rng.uniform(0, 10, size=25)
        data = TrainingSet(x[:, None], y, ("x",))
        model = fit(data, "raw", seed=1, n_trees=1, bootstrap=False, max_depth=1)
        best = (np.inf, None)
        xs = np.sort(x)
        for i in range(1, 25):
            if xs[i] == xs[i - 1]:
                continue
            thr = 0.5 * (xs[i - 1] + xs[i])
            l, r = y[x <= thr], y[x > thr]
            sse = np.sum((l - l.mean()) ** 2) + np.sum((r - r.mean()) ** 2)
            if sse < best[0]:
                best = (sse, thr)
        assert model.trees[0].threshold[0] == best[1]

    X = rng.uniform(-5, 5, size=(30, 3))
    y = rng.uniform(0, 10, size=30)
    data = TrainingSet(X, y, ("a", "b", "c"))
    memorizer = fit(data, "raw", seed=2, n_trees=1, bootstrap=False)
    assert np.array_equal(predict_matrix(memorizer, X), y)

    forest = fit(data, "raw", seed=3, n_trees=100)
    preds = predict_matrix(forest, rng.uniform(-10, 10, size=(1000, 3)))
    assert np.all(preds >= y.min() - 1e-12)
    assert np.all(preds <= y.max() + 1e-12)


# ------------------------------------------------------------ criterion 7


def test_criterion_7_cv_hygiene():
    """Zero leakage and exact 96/24 fold sizes in median mode."""
    from trajela.harness import FeatureRow

    cfg = ExperimentConfig()
    rows = [
        FeatureRow(fid=fid, iid=iid, run=0, target=1.0, traj={}, sv={})
        for fid in range(1, 25)
        for iid in range(1, 6)
    ]
    sizes = audit_folds(loio_folds(cfg, rows))  # raises on any leakage
    assert sizes == {iid: (96, 24) for iid in range(1, 6)}


# ------------------------------------------------------------ criterion 8

DETERMINISM_CFG = ExperimentConfig(
    fids=(1, 8),
    iids=(1, 2),
    runs_per_instance=2,
    budget=80,
    snapshot_at=40,
    trajectory_prefix=40,
    global_sample_sizes=(40,),
    global_repetitions=2,
    cv_folds=2,
    n_trees=12,
    model_repeats=2,
    master_seed=123,
)


def _desk_pipeline_csvs(out_dir, workers):
    cfg = dataclasses.replace(DETERMINISM_CFG, workers=workers)
    results = run_trajectories(cfg)
    glob = compute_global_features(cfg)
    rows = build_rows(cfg, results, glob)
    write_precisions_csv(out_dir / "precisions.csv", results)
    write_features_csv(out_dir / "features_trajectory.csv", rows)
    write_global_csv(out_dir / "features_global.csv", glob)
    reports = {}
    for name in ("SV", "ELA+SV"):
        report, records = train_and_evaluate(cfg, rows, portfolio_spec(name), name=name)
        write_predictions_csv(out_dir / f"predictions_{name}.csv", records)
        reports[name] = report
    write_report_csv(out_dir / "report.csv", reports, fids=cfg.fids)
    return sorted(p.name for p in out_dir.iterdir())


def test_criterion_8_byte_identical_outputs(tmp_path):
    """Same master seed, different worker pools: identical CSV bytes."""
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir()
    b.mkdir()
    names_a = _desk_pipeline_csvs(a, workers=1)
    names_b = _desk_pipeline_csvs(b, workers=2)
    assert names_a == names_b
    for name in names_a:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
