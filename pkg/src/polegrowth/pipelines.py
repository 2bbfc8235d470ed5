"""End-to-end analyses producing plot-ready reports.

Each analysis returns plain dataclasses; :func:`write_report` turns them into
one JSON document plus one CSV per plot.
"""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, is_dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import pandas as pd

from . import lineage
from . import stattests as st
from .dataset import Dataset, mother_daughter_pairs

log = logging.getLogger(__name__)

PVALUE_BINS = 10


@dataclass
class HistogramReport:
    bin_edges: list
    counts: list
    n: int
    label: str

    def frame(self) -> pd.DataFrame:
        e = self.bin_edges
        return pd.DataFrame({"left": e[:-1], "right": e[1:], "count": self.counts})


def histogram(values, label: str, bins: int = PVALUE_BINS, range: Optional[tuple] = None) -> HistogramReport:
    v = np.asarray(values, dtype=float)
    v = v[~np.isnan(v)]
    if range is None:
        if v.size == 0:
            range = (0.0, 1.0)
        else:
            lo, hi = float(v.min()), float(v.max())
            range = (lo, hi) if hi > lo else (lo - 0.5, lo + 0.5)
    counts, edges = np.histogram(v, bins=bins, range=range)
    return HistogramReport(edges.tolist(), counts.astype(int).tolist(), int(v.size), label)


def _map_trees(fn: Callable, items: list, threads: int) -> list:
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


# -- mother / grandmother memory on the old-pole lineage ---------------------


@dataclass
class MotherGrandmotherReport:
    per_tree: list
    p_mother: HistogramReport
    p_grandmother: HistogramReport
    beta_mother: dict
    beta_grandmother: dict
    skipped: dict


def _coef_summary(values) -> dict:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return {"n": 0}
    return {
        "n": int(v.size),
        "mean": float(v.mean()),
        "median": float(np.median(v)),
        "sd": float(v.std(ddof=1)) if v.size > 1 else 0.0,
        "fraction_positive": float((v > 0).mean()),
    }


def spine_triples(spine: pd.Series) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(rate, mother rate, grandmother rate) along a spine indexed by generation."""
    s = spine.to_numpy(float)
    return s[2:], s[1:-1], s[:-2]


def mother_grandmother_analysis(
    ds: Dataset, min_triples: int = 6, bins: int = PVALUE_BINS, threads: int = 1
) -> MotherGrandmotherReport:
    """Per tree: regress spine rate on the mother's and grandmother's rates."""

    def one(item):
        tid, tree = item
        r, m, g = spine_triples(tree.spine())
        ok = ~(np.isnan(r) | np.isnan(m) | np.isnan(g))
        if ok.sum() < min_triples:
            return tid, None, f"{int(ok.sum())} complete triples"
        try:
            fit = st.ols_formula(r, {"mother": m, "grandmother": g})
        except (st.RankDeficientError, st.DegenerateSampleError) as exc:
            return tid, None, str(exc)
        return tid, fit, None

    rows, skipped = [], {}
    for tid, fit, why in _map_trees(one, list(ds.trees.items()), threads):
        if fit is None:
            skipped[tid] = why
            continue
        rows.append(
            {
                "tree": tid,
                "n": fit.n,
                "beta_0": fit.coef("intercept"),
                "beta_m": fit.coef("mother"),
                "beta_g": fit.coef("grandmother"),
                "p_m": fit.p("mother"),
                "p_g": fit.p("grandmother"),
            }
        )
    pm = [r["p_m"] for r in rows]
    pg = [r["p_g"] for r in rows]
    return MotherGrandmotherReport(
        per_tree=rows,
        p_mother=histogram(pm, "p-value of mother coefficient", bins, (0.0, 1.0)),
        p_grandmother=histogram(pg, "p-value of grandmother coefficient", bins, (0.0, 1.0)),
        beta_mother={**_coef_summary([r["beta_m"] for r in rows]), "fraction_p_below_0.05": _frac_below(pm)},
        beta_grandmother={**_coef_summary([r["beta_g"] for r in rows]), "fraction_p_below_0.05": _frac_below(pg)},
        skipped=skipped,
    )


def _frac_below(p, alpha: float = 0.05) -> float:
    p = np.asarray(p, dtype=float)
    return float((p < alpha).mean()) if p.size else math.nan


# -- old pole versus new pole ------------------------------------------------


@dataclass
class PoleComparisonReport:
    mean_comparison: st.TestResult
    correlation_new: st.TestResult
    correlation_old: st.TestResult
    beta_m_new: HistogramReport
    beta_m_old: HistogramReport
    per_tree: list


def pole_comparison(ds: Dataset, level: float = 0.99, bins: int = 20, min_pairs: int = 6) -> PoleComparisonReport:
    """Old vs new pole means, daughter/mother correlations and per-tree slopes.

    ``level`` defaults to 0.99 (the 1% intervals of the original analysis).
    """
    f = ds.frame
    old = f.loc[f["pole"] == "O", "rate"].to_numpy(float)
    new = f.loc[f["pole"] == "N", "rate"].to_numpy(float)
    means = st.student_two_sample(old, new, level)

    pairs = mother_daughter_pairs(f)
    pairs = pairs[pairs["typed"]] if len(pairs) else pairs
    corr = {}
    for p in (0, 1):
        sel = pairs[pairs["pole"] == p]
        corr[p] = st.correlation_ci(sel["mother_rate"], sel["rate"], level)

    rows = []
    for tid, g in pairs.groupby("tree", sort=True):
        for p, name in ((0, "N"), (1, "O")):
            sel = g[g["pole"] == p]
            ok = ~(sel["mother_rate"].isna() | sel["rate"].isna())
            if ok.sum() < min_pairs:
                continue
            try:
                fit = st.ols_formula(sel["rate"], {"mother": sel["mother_rate"]})
            except (st.RankDeficientError, st.DegenerateSampleError):
                continue
            rows.append({"tree": int(tid), "pole": name, "n": fit.n, "beta_m": fit.coef("mother"), "p_m": fit.p("mother")})
    b_new = [r["beta_m"] for r in rows if r["pole"] == "N"]
    b_old = [r["beta_m"] for r in rows if r["pole"] == "O"]
    allb = np.array(b_new + b_old, dtype=float)
    rng = (float(allb.min()), float(allb.max())) if allb.size and allb.max() > allb.min() else None
    return PoleComparisonReport(
        mean_comparison=means,
        correlation_new=corr[0],
        correlation_old=corr[1],
        beta_m_new=histogram(b_new, "beta_m, new pole daughters", bins, rng),
        beta_m_old=histogram(b_old, "beta_m, old pole daughters", bins, rng),
        per_tree=rows,
    )


# -- normalized rate against accumulated poles -------------------------------


@dataclass
class PoleTrendReport:
    label: str
    n_values: list
    mean_normalized_rate: list
    counts: list
    slope: float


@dataclass
class PoleTrendAnalysis:
    cumulated_new: PoleTrendReport
    cumulated_old: PoleTrendReport
    switched_new: PoleTrendReport
    switched_old: PoleTrendReport
    normalization: dict


def normalize_within_groups(frame: pd.DataFrame) -> tuple[pd.Series, dict]:
    """Rate divided by the mean observed rate of its (tree, generation) group."""
    obs = frame["rate"].notna()
    means = frame[obs].groupby(["tree", "generation"])["rate"].transform("mean")
    norm = pd.Series(np.nan, index=frame.index)
    good = means > 0
    norm.loc[means.index[good]] = frame.loc[means.index[good], "rate"] / means[good]
    n_groups = frame.groupby(["tree", "generation"]).ngroups
    obs_groups = frame[obs].groupby(["tree", "generation"]).ngroups
    bad = frame[obs][~good].groupby(["tree", "generation"]).ngroups if (~good).any() else 0
    info = {
        "groups": int(n_groups),
        "groups_without_observed_rate": int(n_groups - obs_groups),
        "groups_with_nonpositive_mean": int(bad),
        "cells_skipped": int((~obs).sum() + (~good).sum()),
        "single_cell_groups": int((frame[obs].groupby(["tree", "generation"]).size() == 1).sum()),
    }
    return norm, info


def _runs(frame: pd.DataFrame) -> pd.DataFrame:
    """Own and mother pole runs, from the file columns with the label as fallback."""

    def pick(col_old, col_new, pole, label_fn):
        out_n, out_t = [], []
        for co, cn, p, k in zip(frame[col_old], frame[col_new], pole, frame["label"]):
            co = None if pd.isna(co) else int(co)
            cn = None if pd.isna(cn) else int(cn)
            if co is not None and co > 0:
                out_n.append(co), out_t.append("O")
            elif cn is not None and cn > 0:
                out_n.append(cn), out_t.append("N")
            else:
                r = label_fn(k)
                out_n.append(None if r is None else r[0]), out_t.append(None if r is None else r[1].value)
        return out_n, out_t

    def own(k):
        return lineage.consecutive_poles(k) if k is not None and lineage.generation(k) >= 2 else None

    def mum(k):
        return lineage.consecutive_poles(k >> 1) if k is not None and lineage.generation(k) >= 3 else None

    n_own, t_own = pick("consec_old", "consec_new", frame["pole"], own)
    n_mum, t_mum = pick("mother_consec_old", "mother_consec_new", frame["pole"], mum)
    return pd.DataFrame({"run": n_own, "run_type": t_own, "mother_run": n_mum, "mother_run_type": t_mum}, index=frame.index)


def _trend(label: str, values: pd.Series, runs: pd.Series, n_max: int) -> PoleTrendReport:
    ns, means, counts = [], [], []
    for n in range(1, n_max + 1):
        v = values[runs == n].dropna()
        if len(v):
            ns.append(n), means.append(float(v.mean())), counts.append(int(len(v)))
    slope = math.nan
    if len(ns) >= 2:
        x = np.asarray(ns, dtype=float)
        y = np.asarray(means)
        xc = x - x.mean()
        slope = float(xc @ (y - y.mean()) / (xc @ xc))
    return PoleTrendReport(label, ns, means, counts, slope)


def pole_trend_analysis(ds: Dataset, n_max: int = 7, n_switch_max: int = 6) -> PoleTrendAnalysis:
    """Mean normalized rate against the number of consecutive identical poles.

    Slopes are per accumulated pole in units of the normalized rate, so 0.044
    reads as +4.4% per pole.
    """
    f = ds.frame
    norm, info = normalize_within_groups(f)
    typed = f["pole"].notna()
    runs = _runs(f)
    norm = norm.where(typed)
    is_new, is_old = f["pole"] == "N", f["pole"] == "O"
    cum_runs_new = runs["run"].where(is_new & (runs["run_type"] == "N"))
    cum_runs_old = runs["run"].where(is_old & (runs["run_type"] == "O"))
    sw_new = runs["mother_run"].where(is_new & (runs["mother_run_type"] == "O"))
    sw_old = runs["mother_run"].where(is_old & (runs["mother_run_type"] == "N"))
    return PoleTrendAnalysis(
        cumulated_new=_trend("n consecutive new poles", norm, cum_runs_new, n_max),
        cumulated_old=_trend("n consecutive old poles", norm, cum_runs_old, n_max),
        switched_new=_trend("new pole after n consecutive old poles", norm, sw_new, n_switch_max),
        switched_old=_trend("old pole after n consecutive new poles", norm, sw_old, n_switch_max),
        normalization=info,
    )


# -- stationarity of the old-pole lineage ------------------------------------


@dataclass
class StationarityReport:
    test: str
    per_tree: list
    histogram: HistogramReport
    uniformity: st.TestResult
    skipped: dict


def split_halves(x) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x)
    h = (x.size + 1) // 2
    return x[:h], x[h:]


def residual_split_test(series, test: str = "ks") -> tuple[float, st.Arma11Fit]:
    fit = st.arma11_fit(series)
    first, second = split_halves(fit.residuals)
    if test == "ks":
        res = st.ks_two_sample(first, second)
    elif test in ("t", "student"):
        res = st.student_two_sample(first, second)
    else:
        raise ValueError(f"unknown test {test!r}")
    return res.p_value, fit


def stationarity_analysis(
    ds: Dataset, test: str = "ks", min_points: int = 20, bins: int = PVALUE_BINS, threads: int = 1
) -> StationarityReport:
    """ARMA(1,1)-whitened first-half/second-half comparison on each old-pole lineage."""
    if test not in ("ks", "t", "student"):
        raise ValueError(f"unknown test {test!r}")

    def one(item):
        tid, tree = item
        s = tree.spine()
        s = s[s.index >= 1].dropna().to_numpy(float)
        if s.size < min_points:
            return tid, None, None, f"{s.size} usable spine points"
        try:
            p, fit = residual_split_test(s, test)
        except st.DegenerateSampleError as exc:
            return tid, None, None, f"degenerate series: {exc}"
        except st.ArmaConvergenceError as exc:
            return tid, None, None, f"ARMA fit failed: {exc}"
        return tid, p, fit, None

    rows, skipped = [], {}
    for tid, p, fit, why in _map_trees(one, list(ds.trees.items()), threads):
        if p is None:
            skipped[tid] = why
            continue
        rows.append({"tree": tid, "T": int(fit.residuals.size), "phi": fit.phi, "theta": fit.theta, "mu": fit.intercept, "p_value": p})
    pv = [r["p_value"] for r in rows]
    uni = st.ks_uniform(pv) if pv else st.TestResult(math.nan, math.nan)
    return StationarityReport(
        test="ks" if test == "ks" else "t",
        per_tree=rows,
        histogram=histogram(pv, f"p-values of the {test} stationarity test", bins, (0.0, 1.0)),
        uniformity=uni,
        skipped=skipped,
    )


# -- per-generation summaries ------------------------------------------------


def fivenum(x) -> list[float]:
    """Tukey five-number summary (min, lower hinge, median, upper hinge, max)."""
    x = np.sort(np.asarray(x, dtype=float))
    n = x.size
    if n == 0:
        return [math.nan] * 5
    n4 = math.floor((n + 3) / 2) / 2
    d = np.array([1, n4, (n + 1) / 2, n + 1 - n4, n]) - 1
    return [float(0.5 * (x[int(math.floor(i))] + x[int(math.ceil(i))])) for i in d]


@dataclass
class GenerationRow:
    generation: int
    count: int
    min: float
    q1: float
    median: float
    q3: float
    max: float
    histogram: HistogramReport


def generation_summary(
    ds: Dataset, generations: Sequence[int], bins: int = 10, drop_extreme: bool = False
) -> list[GenerationRow]:
    """Box-plot numbers and a histogram of growth rates for each generation.

    With ``drop_extreme`` rates below 0 or above 0.08 are left out.
    """
    f = ds.frame
    rows = []
    for g in generations:
        r = f.loc[f["generation"] == g, "rate"].dropna().to_numpy(float)
        if drop_extreme:
            r = r[(r >= 0) & (r <= 0.08)]
        five = fivenum(r)
        rows.append(GenerationRow(int(g), int(r.size), *five, histogram(r, f"generation {g}", bins)))
    return rows


# -- serialization -----------------------------------------------------------


def _plain(obj):
    if is_dataclass(obj):
        return {k: _plain(v) for k, v in asdict(obj).items()}
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return None if math.isnan(v) else v
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def to_jsonable(obj):
    return _plain(obj)


def report_tables(report) -> dict[str, pd.DataFrame]:
    """Plot-ready tables, one per plot."""
    if isinstance(report, MotherGrandmotherReport):
        return {
            "mg_per_tree": pd.DataFrame(report.per_tree),
            "mg_pvalue_mother_hist": report.p_mother.frame(),
            "mg_pvalue_grandmother_hist": report.p_grandmother.frame(),
        }
    if isinstance(report, PoleComparisonReport):
        return {
            "poles_per_tree": pd.DataFrame(report.per_tree),
            "poles_beta_m_new_hist": report.beta_m_new.frame(),
            "poles_beta_m_old_hist": report.beta_m_old.frame(),
        }
    if isinstance(report, PoleTrendAnalysis):
        out = {}
        for key in ("cumulated_new", "cumulated_old", "switched_new", "switched_old"):
            t = getattr(report, key)
            out[f"trend_{key}"] = pd.DataFrame({"n": t.n_values, "mean_normalized_rate": t.mean_normalized_rate, "count": t.counts})
        return out
    if isinstance(report, StationarityReport):
        return {"stationarity_per_tree": pd.DataFrame(report.per_tree), "stationarity_pvalue_hist": report.histogram.frame()}
    if isinstance(report, list) and (not report or isinstance(report[0], GenerationRow)):
        box = pd.DataFrame([{k: getattr(r, k) for k in ("generation", "count", "min", "q1", "median", "q3", "max")} for r in report])
        hist = pd.concat([r.histogram.frame().assign(generation=r.generation) for r in report], ignore_index=True) if report else pd.DataFrame()
        return {"generations_boxplot": box, "generations_hist": hist}
    raise TypeError(f"no table layout for {type(report).__name__}")


def write_report(report, out_dir, name: str, provenance: Optional[dict] = None) -> Path:
    """Write ``<name>.json`` and the CSV tables into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = {"analysis": name, "provenance": provenance or {}, "result": to_jsonable(report)}
    path = out / f"{name}.json"
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    for key, table in report_tables(report).items():
        table.to_csv(out / f"{key}.csv", index=False, float_format="%.10g", lineterminator="\n")
    return path
