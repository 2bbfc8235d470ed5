"""Acceptance suite: one test per criterion, each recording a PASS/FAIL/SKIP line.

Seeds are fixed constants; criteria that need the original data files look in
``$POLEGROWTH_DATA_DIR``, the repository root and ``data/``.
"""
import math
import os
import time
from pathlib import Path

import mpmath
import numpy as np
import pytest

from polegrowth import bar, distributions as dist, ingest, lineage, pipelines as pl, preprocess as pp
from polegrowth import stattests as st
from polegrowth.bar import BarParams
from polegrowth.dataset import Dataset
from polegrowth.lineage import Pole

from conftest import preprocessing_fixture, record
from test_stattests import normal_equation_oracle

WANG_FIT = BarParams(0.0304, 0.0664, 0.0281, 0.0994, noise_sd=0.005)
WANG_CI = [(0.0200, 0.0410), (-0.4652, 0.5980), (0.0178, 0.0385), (-0.3194, 0.5182)]
ROOT = Path(__file__).resolve().parents[1]


def data_file(*names):
    dirs = [os.environ.get("POLEGROWTH_DATA_DIR"), ROOT, ROOT / "data"]
    for d in filter(None, dirs):
        for n in names:
            p = Path(d) / n
            if p.is_file():
                return p
    return None


def verdict(n, title, checks: dict, detail=""):
    """Record and assert; ``checks`` maps a short name to a boolean."""
    failed = [k for k, v in checks.items() if not v]
    record(n, title, not failed, detail + (f"; failed: {', '.join(failed)}" if failed else ""))
    assert not failed, f"criterion {n}: {failed} ({detail})"


def coverage_study(n, title, missing_prob, seed_base):
    reps, level = 200, 0.95
    t0 = time.perf_counter()
    est, cover = [], []
    for r in range(reps):
        ds = bar.simulate_comb(WANG_FIT, 100, 100, missing_prob=missing_prob, seed=[seed_base, r])
        e = bar.estimate_comb(ds, level=level)
        est.append(e.theta_hat)
        cover.append([lo <= t <= hi for (lo, hi), t in zip(e.ci, WANG_FIT.theta)])
    elapsed = time.perf_counter() - t0
    est = np.array(est)
    mc_se = est.std(axis=0, ddof=1) / math.sqrt(reps)
    z_bias = (est.mean(axis=0) - WANG_FIT.theta) / mc_se
    cov = np.mean(cover, axis=0)
    detail = (
        f"bias/MC-SE {np.round(z_bias, 2).tolist()}, coverage {cov.round(3).tolist()}, {elapsed:.1f}s"
    )
    verdict(
        n,
        title,
        {
            "bias": bool(np.all(np.abs(z_bias) < 3)),
            "coverage": bool(np.all((cov >= 0.92) & (cov <= 0.98))),
            "runtime": elapsed < 120,
        },
        detail,
    )


def test_criterion_1_exact_recovery():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    for k in range(10):
        theta = rng.uniform([-0.05, -0.9, -0.05, -0.9], [0.05, 0.9, 0.05, 0.9])
        p = BarParams(*theta)
        ds = bar.simulate_comb(p, 40, 3, seed=k, x1=p.old_pole_fixed_point + 0.01)
        est = bar.estimate_comb(ds)
        worst = max(worst, float(np.max(np.abs(est.theta_hat - theta) / np.abs(theta))))
    elapsed = time.perf_counter() - t0
    verdict(
        1,
        "BAR estimator exactness",
        {"relative error": worst < 1e-10, "runtime": elapsed < 1.0},
        f"max relative error {worst:.1e}, {elapsed:.2f}s",
    )


@pytest.mark.slow
def test_criterion_2_consistency_and_coverage():
    coverage_study(2, "BAR consistency and 95% coverage", 0.0, 2)


@pytest.mark.slow
def test_criterion_3_missing_data():
    coverage_study(3, "BAR robustness to missing data (p = 0.2)", 0.2, 3)


def test_criterion_4_wang_estimates():
    path = data_file("data_wang.txt", "data_wangt.txt")
    title = "BAR estimates on the Wang data"
    if path is None:
        record(4, title, None, "data file not present")
        pytest.skip("Wang data file not present")
    ds, _ = pp.preprocess(ingest.parse_wang(path))
    est = bar.estimate_comb(ds, level=0.95)
    rounded = [round(float(t), 4) for t in est.theta_hat]
    ci_ok = all(
        abs(lo - plo) <= 0.2 * (phi - plo) and abs(hi - phi) <= 0.2 * (phi - plo)
        for (lo, hi), (plo, phi) in zip(est.ci, WANG_CI)
    )
    verdict(
        4,
        title,
        {"estimates": rounded == [0.0304, 0.0664, 0.0281, 0.0994]},
        f"theta {rounded}, intervals within 20% of printed widths: {ci_ok} (best effort)",
    )


def test_criterion_5_kernel_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(505)
    worst_ols = 0.0
    for _ in range(50):
        n = int(rng.integers(6, 30))
        X = np.column_stack([np.ones(n), rng.normal(size=(n, 2))])
        y = X @ rng.normal(size=3) + rng.normal(size=n)
        ref = np.array(normal_equation_oracle(y.tolist(), X.tolist()))
        worst_ols = max(worst_ols, float(np.max(np.abs(st.ols(y, X).coefficients - ref))))

    mpmath.mp.dps = 30
    worst_t = 0.0
    for df in (1, 2, 3, 5, 10, 30, 100):
        c = mpmath.gamma((df + 1) / mpmath.mpf(2)) / (mpmath.sqrt(df * mpmath.pi) * mpmath.gamma(df / mpmath.mpf(2)))
        for t in (-4.0, -1.5, -0.3, 0.0, 0.7, 2.0, 6.0):
            ref = c * mpmath.quad(lambda u: (1 + u * u / df) ** (-(df + 1) / mpmath.mpf(2)), [-mpmath.inf, 0, t])
            worst_t = max(worst_t, abs(dist.t_cdf(t, df) - float(ref)))
    worst_k = 0.0
    for lam in (0.3, 0.5, 0.8, 1.0, 1.36, 1.63, 2.0, 3.0):
        ref = 1 - mpmath.sqrt(2 * mpmath.pi) / lam * mpmath.nsum(
            lambda k: mpmath.exp(-((2 * k - 1) ** 2) * mpmath.pi**2 / (8 * lam * lam)), [1, mpmath.inf]
        )
        worst_k = max(worst_k, abs(dist.kolmogorov_sf(lam) - float(ref)))
    elapsed = time.perf_counter() - t0
    verdict(
        5,
        "statistical kernel oracles",
        {"ols": worst_ols < 1e-8, "t cdf": worst_t < 1e-8, "kolmogorov": worst_k < 1e-8, "runtime": elapsed < 30},
        f"max errors ols {worst_ols:.1e}, t {worst_t:.1e}, kolmogorov {worst_k:.1e}, {elapsed:.1f}s",
    )


@pytest.mark.slow
def test_criterion_6_null_calibration():
    t0 = time.perf_counter()
    reps = 600
    rng = np.random.default_rng(606)
    p_t = [st.student_two_sample(rng.normal(1.0, 1.0, 30), rng.normal(1.0, 2.0, 45)).p_value for _ in range(reps)]
    p_ks = [st.ks_two_sample(rng.normal(size=300), rng.normal(size=400)).p_value for _ in range(reps)]
    spine, new = bar.simulate_comb_arrays(BarParams(0.03, 0.0, 0.021, 0.3, noise_sd=0.005), 200, reps, seed=606)
    mg = pl.mother_grandmother_analysis(Dataset("wang", bar.comb_frame(spine, new)))
    p_g = [r["p_g"] for r in mg.per_tree]
    u = {name: st.ks_uniform(p).p_value for name, p in (("welch", p_t), ("ks", p_ks), ("beta_g", p_g))}
    elapsed = time.perf_counter() - t0
    checks = {name: v > 0.01 for name, v in u.items()}
    checks["replications"] = min(len(p_t), len(p_ks), len(p_g)) >= 500
    checks["runtime"] = elapsed < 180
    verdict(
        6,
        "p-value calibration under H0",
        checks,
        ", ".join(f"{k} uniformity p={v:.3f}" for k, v in u.items()) + f", {elapsed:.1f}s",
    )


@pytest.mark.slow
def test_criterion_7_stationarity_discrimination():
    t0 = time.perf_counter()
    # odd length: equal halves put the KS statistic on a coarse 1/(T/2) lattice,
    # which alone makes the p-values fail a uniformity check
    T, n_trees = 301, 200
    sigma = WANG_FIT.noise_sd / math.sqrt(1 - WANG_FIT.b1**2)
    spine, new = bar.simulate_comb_arrays(WANG_FIT, T, n_trees, seed=707)
    null = pl.stationarity_analysis(Dataset("wang", bar.comb_frame(spine, new)))
    spine, new = bar.simulate_comb_arrays(WANG_FIT, T, n_trees, seed=708)
    spine[:, 1 + (T + 1) // 2 :] += 5 * sigma
    shifted = Dataset("wang", bar.comb_frame(spine, new))
    alt = pl.stationarity_analysis(shifted)
    elapsed = time.perf_counter() - t0
    median_p = float(np.median([r["p_value"] for r in alt.per_tree]))
    phi = float(np.median([r["phi"] for r in alt.per_tree]))
    student = pl.stationarity_analysis(shifted, test="t")
    median_t = float(np.median([r["p_value"] for r in student.per_tree]))
    verdict(
        7,
        "stationarity test discrimination",
        {
            "null uniform": null.uniformity.p_value > 0.01 and len(null.per_tree) == n_trees,
            "shift median p < 0.05": median_p < 0.05,
            "runtime": elapsed < 180,
        },
        f"null uniformity p={null.uniformity.p_value:.3f}, shift median p={median_p:.3f} "
        f"(median phi {phi:.2f}; Student variant median p={median_t:.3f}), {elapsed:.1f}s",
    )


def test_criterion_8_preprocessing():
    t0 = time.perf_counter()
    ds, _, (tree, gen) = preprocessing_fixture()
    clean, report = pp.preprocess(ds)
    elapsed = time.perf_counter() - t0
    marked = report.marked_cells
    verdict(
        8,
        "preprocessing conformance",
        {
            "short tree removed": report.trees_removed_short == [6],
            "shifted tree removed": report.trees_removed_aberrant == [7],
            "one cell marked": len(marked) == 1 and (marked[0]["tree"], marked[0]["generation"]) == (tree, gen),
            "runtime": elapsed < 1.0,
        },
        f"short {report.trees_removed_short}, aberrant {report.trees_removed_aberrant}, marked {[(m['tree'], m['generation'], m['pole']) for m in marked]}, {elapsed:.2f}s",
    )


def test_criterion_9_lineage():
    bad = 0
    for k in range(2, 2**12):
        digits = bin(k)[4:]
        types = [Pole.O if c == "1" else Pole.N for c in digits]
        ok = lineage.mother(k) == k // 2 and lineage.pole_type(k) is (Pole.O if k & 1 else Pole.N)
        if len(types) >= 1:
            run = len(digits) - len(digits.rstrip(digits[-1]))
            ok &= lineage.type_sequence(k) == types
            ok &= lineage.consecutive_poles(k) == (run, types[-1])
        bad += not ok
    examples = (
        lineage.mother(103) == 51
        and lineage.format_types(lineage.type_sequence(103)) == "NNOOO"
        and lineage.consecutive_poles(103) == (3, Pole.O)
        and lineage.mother(19) == 9
        and lineage.format_types(lineage.type_sequence(19)) == "NOO"
        and lineage.pole_type(19) is Pole.O
    )
    verdict(9, "lineage arithmetic", {"exhaustive": bad == 0, "worked examples": examples}, f"{bad} mismatches below 2^12")


def test_criterion_10_data_reproductions():
    wang = data_file("data_wang.txt", "data_wangt.txt")
    stewart = data_file("data_stewart.txt")
    title = "pole comparisons and trend slopes on the original data"
    if wang is None or stewart is None:
        record(10, title, None, "data files not present")
        pytest.skip("original data files not present")
    ds, _ = pp.preprocess(ingest.parse_wang(wang))
    poles = pl.pole_comparison(ds, level=0.99)
    mc = poles.mean_comparison
    ci_old = [round(v, 4) for v in mc.details["ci_mean_x"]]
    ci_new = [round(v, 4) for v in mc.details["ci_mean_y"]]
    trends = pl.pole_trend_analysis(ingest.parse_stewart(stewart))
    slopes = [trends.cumulated_new.slope, trends.cumulated_old.slope, trends.switched_new.slope, trends.switched_old.slope]
    verdict(
        10,
        title,
        {
            "welch p": mc.p_value < 1e-16,
            "old mean ci": ci_old == [0.0309, 0.0310],
            "new mean ci": ci_new == [0.0319, 0.0320],
            "slopes": all(abs(s - e) <= 0.002 for s, e in zip(slopes, (0.044, -0.011, 0.001, -0.005))),
        },
        f"p={mc.p_value:.2e}, ci old {ci_old}, new {ci_new}, slopes {np.round(slopes, 4).tolist()}",
    )
