"""Cleaning of comb (channel) data before any modelling.

Three passes: drop short trees, drop trees whose mean rate is far from the
robust global location, then mark within-tree outliers per pole type.  Marked
cells keep their original value in ``raw_rate``; their ``rate`` becomes NaN so
that every downstream estimator treats them as missing.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from .dataset import Dataset, LineageTree

log = logging.getLogger(__name__)

MAD_CONSTANT = 1.4826


class DegenerateDatasetError(ValueError):
    pass


def trimmed_mean(xs, trim: float = 0.0) -> float:
    """Mean after dropping ``floor(trim * n)`` values at each end."""
    x = np.sort(np.asarray(xs, dtype=float))
    n = x.size
    if n == 0:
        raise ValueError("trimmed mean of an empty sample")
    if not 0 <= trim < 0.5:
        raise ValueError(f"trim must be in [0, 0.5), got {trim}")
    k = int(math.floor(trim * n))
    return float(x[k : n - k].mean())


def mad(xs, constant: float = MAD_CONSTANT) -> float:
    """Median absolute deviation, scaled for consistency with the normal sd.

    Pass ``constant=1`` for the raw MAD.
    """
    x = np.asarray(xs, dtype=float)
    if x.size == 0:
        raise ValueError("MAD of an empty sample")
    return float(constant * np.median(np.abs(x - np.median(x))))


@dataclass(frozen=True)
class RobustStats:
    m: float
    sigma: float


@dataclass
class PreprocessReport:
    trees_removed_short: list = field(default_factory=list)
    trees_removed_aberrant: list = field(default_factory=list)
    outliers_marked: dict = field(default_factory=dict)
    marked_cells: list = field(default_factory=list)
    m: float = math.nan
    sigma: float = math.nan
    tree_means: dict = field(default_factory=dict)

    @property
    def n_marked(self) -> int:
        return sum(sum(v.values()) for v in self.outliers_marked.values())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["outliers_marked"] = {str(k): v for k, v in self.outliers_marked.items()}
        d["tree_means"] = {str(k): v for k, v in self.tree_means.items()}
        d["n_marked"] = self.n_marked
        return d


def robust_stats(ds: Dataset, trim: float = 0.05, mad_constant: float = MAD_CONSTANT) -> RobustStats:
    r = ds.frame["rate"].to_numpy(float)
    r = r[~np.isnan(r)]
    return RobustStats(trimmed_mean(r, trim), mad(r, mad_constant))


def filter_trees(
    ds: Dataset,
    min_generations: int = 20,
    trim: float = 0.05,
    mad_constant: float = MAD_CONSTANT,
    stats: Optional[RobustStats] = None,
) -> tuple[Dataset, PreprocessReport]:
    """Remove short trees, then trees whose mean rate is off by more than sigma.

    A tree is short when its deepest generation index (root = 0) is below
    ``min_generations``.  ``stats`` freezes the global location/scale instead
    of recomputing them on the surviving trees.
    """
    report = PreprocessReport()
    trees = ds.trees
    kept = []
    for tid, tree in trees.items():
        if tree.max_generation < min_generations:
            report.trees_removed_short.append(tid)
        else:
            kept.append(tid)
    if not kept:
        raise DegenerateDatasetError("every tree is shorter than the generation threshold")
    remaining = ds.subset(kept)
    if stats is None:
        stats = robust_stats(remaining, trim, mad_constant)
    report.m, report.sigma = stats.m, stats.sigma

    survivors = []
    for tid in kept:
        r = trees[tid].rates()
        m_t = float(r.mean()) if r.size else math.nan
        report.tree_means[tid] = m_t
        if r.size and abs(m_t - stats.m) <= stats.sigma:
            survivors.append(tid)
        else:
            report.trees_removed_aberrant.append(tid)
    if not survivors:
        raise DegenerateDatasetError("every tree was removed as aberrant")
    log.info(
        "kept %d of %d trees (%d short, %d aberrant)",
        len(survivors),
        len(trees),
        len(report.trees_removed_short),
        len(report.trees_removed_aberrant),
    )
    return ds.subset(survivors), report


def mark_outliers(tree: LineageTree, sigma: float, k_sigma: float = 3.0) -> tuple[LineageTree, dict]:
    """Mark cells outside ``[median - k*sigma, median + k*sigma]`` of their pole class.

    Medians are per tree and per pole type; the interval is closed.  Returns the
    new tree and the number of cells marked per pole type.
    """
    f = tree.frame.copy()
    counts = {"O": 0, "N": 0}
    marked = np.zeros(len(f), dtype=bool)
    rate = f["rate"].to_numpy(float)
    pole = f["pole"].to_numpy(object)
    for p in ("O", "N"):
        sel = (pole == p) & ~np.isnan(rate)
        if not sel.any():
            warnings.warn(f"tree {tree.tree_id}: no observed {p} cells, class skipped", stacklevel=2)
            continue
        med = float(np.median(rate[sel]))
        out = sel & (np.abs(rate - med) > k_sigma * sigma)
        counts[p] = int(out.sum())
        marked |= out
    if marked.any():
        f.loc[marked, "outlier"] = True
        f.loc[marked, "rate"] = np.nan
        gone = {k for k in f.loc[marked, "label"] if k is not None}
        is_daughter = f["label"].map(lambda k: k is not None and k > 1 and (k >> 1) in gone).to_numpy(bool)
        f.loc[is_daughter, "mother_rate"] = np.nan
    return LineageTree(tree.tree_id, f), counts


def preprocess(
    ds: Dataset,
    min_generations: int = 20,
    trim: float = 0.05,
    k_sigma: float = 3.0,
    mad_constant: float = MAD_CONSTANT,
    stats: Optional[RobustStats] = None,
) -> tuple[Dataset, PreprocessReport]:
    """Full cleaning: short trees, aberrant trees, per-pole outliers."""
    kept, report = filter_trees(ds, min_generations, trim, mad_constant, stats)
    frames = []
    for tid, tree in kept.trees.items():
        marked_tree, counts = mark_outliers(tree, report.sigma, k_sigma)
        report.outliers_marked[tid] = counts
        f = marked_tree.frame
        for row in f[f["outlier"] & ~tree.frame["outlier"]].itertuples(index=False):
            report.marked_cells.append(
                {
                    "tree": tid,
                    "label": None if row.label is None else str(row.label),
                    "generation": int(row.generation),
                    "pole": row.pole,
                    "raw_rate": float(row.raw_rate),
                }
            )
        frames.append(f)
    out = Dataset(ds.source, pd.concat(frames, ignore_index=True))
    return out, report
