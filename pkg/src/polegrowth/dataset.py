"""In-memory representation of lineage datasets.

A :class:`Dataset` is a thin wrapper over a columnar :class:`pandas.DataFrame`
with one row per observed cell.  Missing values (the ``-1`` sentinel of the text
formats) are NaN for real columns and ``<NA>`` for the integer columns.  Labels
are kept as Python integers in an object column because comb labels overflow
64 bits after 62 generations.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np
import pandas as pd

from . import lineage

COLUMNS = [
    "tree",
    "label",
    "generation",
    "mother_generation",
    "rate",
    "mother_rate",
    "consec_old",
    "consec_new",
    "mother_consec_old",
    "mother_consec_new",
    "pole",
    "outlier",
    "raw_rate",
]
INT_COLUMNS = ["consec_old", "consec_new", "mother_consec_old", "mother_consec_new", "mother_generation"]


@dataclass(frozen=True)
class CellRecord:
    tree_id: int
    label: Optional[int]
    generation: int
    mother_generation: Optional[int]
    growth_rate: Optional[float]
    mother_growth_rate: Optional[float]
    consec_old: Optional[int]
    consec_new: Optional[int]
    mother_consec_old: Optional[int]
    mother_consec_new: Optional[int]
    pole: Optional[str] = None
    outlier_flag: bool = False
    raw_growth_rate: Optional[float] = None

    @property
    def mother_label(self) -> Optional[int]:
        if self.label is None or self.label == 1:
            return None
        return lineage.mother(self.label)


def _opt_float(v) -> Optional[float]:
    return None if pd.isna(v) else float(v)


def _opt_int(v) -> Optional[int]:
    return None if pd.isna(v) else int(v)


def empty_frame() -> pd.DataFrame:
    return normalize_frame(pd.DataFrame({c: [] for c in COLUMNS}))


def normalize_frame(frame: pd.DataFrame) -> pd.DataFrame:
    """Coerce column dtypes and fill audit columns."""
    frame = frame.copy()
    for col in COLUMNS:
        if col not in frame:
            frame[col] = np.nan
    frame["tree"] = frame["tree"].astype(np.int64)
    frame["generation"] = frame["generation"].astype(np.int64)
    for col in INT_COLUMNS:
        frame[col] = frame[col].astype("Int64")
    frame["rate"] = frame["rate"].astype(float)
    frame["mother_rate"] = frame["mother_rate"].astype(float)
    frame["outlier"] = frame["outlier"].map(lambda v: False if pd.isna(v) else bool(v)).astype(bool)
    frame["raw_rate"] = frame["raw_rate"].astype(float).fillna(frame["rate"])
    frame["label"] = frame["label"].astype(object).where(frame["label"].notna(), None)
    frame["pole"] = frame["pole"].astype(object).where(frame["pole"].notna(), None)
    return frame[COLUMNS].reset_index(drop=True)


@dataclass
class LineageTree:
    """All cells of one genealogical tree."""

    tree_id: int
    frame: pd.DataFrame

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def max_generation(self) -> int:
        return int(self.frame["generation"].max()) if len(self.frame) else -1

    def rates(self) -> np.ndarray:
        r = self.frame["rate"].to_numpy(float)
        return r[~np.isnan(r)]

    def spine(self) -> pd.Series:
        """Growth rate of the cumulated-old-pole lineage indexed by generation.

        Generation 0 (the root) is read from the mother column of the generation-1
        old-pole cell when the root itself is not recorded.  Missing cells are NaN.
        """
        f = self.frame
        is_spine = f["label"].map(lambda k: k is not None and k & (k + 1) == 0)
        sp = f.loc[is_spine, ["generation", "rate"]].drop_duplicates("generation")
        s = pd.Series(sp["rate"].to_numpy(float), index=sp["generation"].to_numpy(int))
        if 0 not in s.index:
            first = f.loc[is_spine & (f["generation"] == 1), "mother_rate"]
            if len(first):
                s.loc[0] = float(first.iloc[0])
        if s.empty:
            return s
        full = np.arange(0, int(s.index.max()) + 1)
        return s.reindex(full).sort_index()


@dataclass
class Dataset:
    source: str
    frame: pd.DataFrame = field(default_factory=empty_frame)

    def __post_init__(self) -> None:
        self.frame = normalize_frame(self.frame)

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def tree_ids(self) -> list[int]:
        return sorted(int(t) for t in self.frame["tree"].unique())

    @property
    def n_trees(self) -> int:
        return int(self.frame["tree"].nunique())

    @property
    def trees(self) -> dict[int, LineageTree]:
        return {int(t): LineageTree(int(t), g.reset_index(drop=True)) for t, g in self.frame.groupby("tree", sort=True)}

    def tree(self, tree_id: int) -> LineageTree:
        return LineageTree(tree_id, self.frame[self.frame["tree"] == tree_id].reset_index(drop=True))

    def subset(self, tree_ids) -> "Dataset":
        keep = self.frame["tree"].isin(list(tree_ids))
        return Dataset(self.source, self.frame[keep])

    def records(self) -> Iterator[CellRecord]:
        for row in self.frame.itertuples(index=False):
            yield CellRecord(
                tree_id=int(row.tree),
                label=row.label,
                generation=int(row.generation),
                mother_generation=_opt_int(row.mother_generation),
                growth_rate=_opt_float(row.rate),
                mother_growth_rate=_opt_float(row.mother_rate),
                consec_old=_opt_int(row.consec_old),
                consec_new=_opt_int(row.consec_new),
                mother_consec_old=_opt_int(row.mother_consec_old),
                mother_consec_new=_opt_int(row.mother_consec_new),
                pole=row.pole,
                outlier_flag=bool(row.outlier),
                raw_growth_rate=_opt_float(row.raw_rate),
            )

    @classmethod
    def from_records(cls, source: str, records) -> "Dataset":
        rows = [
            {
                "tree": r.tree_id,
                "label": r.label,
                "generation": r.generation,
                "mother_generation": r.mother_generation,
                "rate": np.nan if r.growth_rate is None else r.growth_rate,
                "mother_rate": np.nan if r.mother_growth_rate is None else r.mother_growth_rate,
                "consec_old": r.consec_old,
                "consec_new": r.consec_new,
                "mother_consec_old": r.mother_consec_old,
                "mother_consec_new": r.mother_consec_new,
                "pole": r.pole,
                "outlier": r.outlier_flag,
                "raw_rate": np.nan if r.raw_growth_rate is None else r.raw_growth_rate,
            }
            for r in records
        ]
        return cls(source, pd.DataFrame(rows, columns=COLUMNS) if rows else empty_frame())


def mother_daughter_pairs(frame: pd.DataFrame, comb_only: bool = False) -> pd.DataFrame:
    """Mother/daughter growth-rate pairs, one row per labelled non-root cell.

    The mother's rate is taken from the mother's own row when that row is in
    ``frame`` (so outlier marks on the mother propagate), otherwise from the
    daughter's mother column.  Columns: tree, generation, label, pole (0 = N,
    1 = O, from the label), typed (the row carries a known pole type),
    mother_rate, rate; missing rates are NaN.
    """
    f = frame[frame["label"].map(lambda k: k is not None and k > 1)]
    if comb_only:
        f = f[f["label"].map(lineage.is_comb_label)]
    if f.empty:
        return pd.DataFrame(
            {"tree": [], "generation": [], "label": [], "pole": [], "typed": [], "mother_rate": [], "rate": []}
        )
    labelled = frame[frame["label"].map(lambda k: k is not None)]
    own = {(int(t), k): r for t, k, r in zip(labelled["tree"], labelled["label"], labelled["rate"])}
    mothers = [k >> 1 for k in f["label"]]
    mrate = np.array(
        [own.get((int(t), mk), mr) for t, mk, mr in zip(f["tree"], mothers, f["mother_rate"])], dtype=float
    )
    return pd.DataFrame(
        {
            "tree": f["tree"].to_numpy(np.int64),
            "generation": f["generation"].to_numpy(np.int64),
            "label": f["label"].to_numpy(object),
            "pole": np.array([k & 1 for k in f["label"]], dtype=np.int64),
            "typed": f["pole"].notna().to_numpy(bool),
            "mother_rate": mrate,
            "rate": f["rate"].to_numpy(float),
        }
    )
