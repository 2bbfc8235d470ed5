"""Readers and writers for the whitespace-column lineage formats.

Both formats put one cell per line and use ``-1`` for "not available".
Numbers may carry a trailing dot (``103.``).

Stewart layout (11 columns)::

    tree  cell  mother  gen  mother_gen  rate  mother_rate
    consec_old  consec_new  mother_consec_old  mother_consec_new

Wang layout (9 columns, no labels: they are rebuilt from generation and type)::

    tree  gen  mother_gen  rate  mother_rate
    consec_old  consec_new  mother_consec_old  mother_consec_new
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from . import lineage
from .dataset import COLUMNS, Dataset, empty_frame

MISSING = -1.0
EXPECTED_COUNTS = {"stewart": (22732, 101), "wang": (45255, 224)}
JSON_SCHEMA = "polegrowth-dataset/1"


class ParseError(ValueError):
    def __init__(self, path, lineno: int, message: str):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = path
        self.lineno = lineno


class IntegrityWarning(UserWarning):
    """Internally inconsistent record (labels, generations, pole counts)."""


class CountMismatchWarning(UserWarning):
    """Record/tree counts differ from the published data sets."""


def _fields(path, lineno: int, line: str, ncols: int) -> Optional[list[float]]:
    parts = line.split()
    if not parts:
        return None
    if len(parts) != ncols:
        raise ParseError(path, lineno, f"expected {ncols} columns, found {len(parts)}")
    try:
        return [float(p) for p in parts]
    except ValueError as exc:
        raise ParseError(path, lineno, str(exc)) from None


def _val(x: float) -> float:
    return math.nan if x == MISSING else x


def _count(x: float) -> Optional[int]:
    return None if x == MISSING else int(x)


def _check_counts(ds: Dataset, check: bool) -> None:
    if not check:
        return
    want = EXPECTED_COUNTS[ds.source]
    got = (len(ds), ds.n_trees)
    if got != want:
        warnings.warn(
            f"{ds.source} data: {got[0]} cells in {got[1]} trees (published: {want[0]} in {want[1]})",
            CountMismatchWarning,
            stacklevel=3,
        )


def _read_lines(path):
    with open(path, "r", encoding="ascii", errors="strict") as fh:
        yield from enumerate(fh, start=1)


def parse_stewart(path, check_counts: bool = True) -> Dataset:
    rows = []
    for lineno, line in _read_lines(path):
        v = _fields(path, lineno, line, 11)
        if v is None:
            continue
        label = int(v[1])
        if label < 1 or label != v[1]:
            raise ParseError(path, lineno, f"invalid cell number {v[1]}")
        gen = int(v[3])
        if lineage.generation(label) != gen:
            warnings.warn(f"{path}:{lineno}: cell {label} recorded in generation {gen}", IntegrityWarning, stacklevel=2)
        if v[2] != MISSING and label > 1 and int(v[2]) != label >> 1:
            warnings.warn(
                f"{path}:{lineno}: mother {int(v[2])} of cell {label} should be {label >> 1}",
                IntegrityWarning,
                stacklevel=2,
            )
        mgen = _count(v[4])
        if mgen is not None and mgen != gen - 1:
            warnings.warn(f"{path}:{lineno}: mother generation {mgen} for generation {gen}", IntegrityWarning, stacklevel=2)
        rows.append(
            {
                "tree": int(v[0]),
                "label": label,
                "generation": gen,
                "mother_generation": mgen,
                "rate": _val(v[5]),
                "mother_rate": _val(v[6]),
                "consec_old": _count(v[7]),
                "consec_new": _count(v[8]),
                "mother_consec_old": _count(v[9]),
                "mother_consec_new": _count(v[10]),
                "pole": lineage.pole_type(label).value if gen >= 2 else None,
            }
        )
    ds = Dataset("stewart", pd.DataFrame(rows, columns=COLUMNS) if rows else empty_frame())
    _check_counts(ds, check_counts)
    return ds


def wang_pole(consec_old: Optional[int], consec_new: Optional[int]) -> Optional[lineage.Pole]:
    old = consec_old is not None and consec_old > 0
    new = consec_new is not None and consec_new > 0
    if old and new:
        raise ValueError("both consecutive-pole counts are positive")
    if old:
        return lineage.Pole.O
    if new:
        return lineage.Pole.N
    return None


def parse_wang(path, check_counts: bool = True) -> Dataset:
    rows = []
    for lineno, line in _read_lines(path):
        v = _fields(path, lineno, line, 9)
        if v is None:
            continue
        gen = int(v[1])
        co, cn = _count(v[5]), _count(v[6])
        try:
            pole = wang_pole(co, cn)
        except ValueError as exc:
            raise ParseError(path, lineno, str(exc)) from None
        label: Optional[int] = None
        if gen == 0:
            label = 1
        elif pole is None:
            warnings.warn(f"{path}:{lineno}: pole type undetermined, label not rebuilt", IntegrityWarning, stacklevel=2)
        else:
            new_label, old_label = lineage.comb_labels(gen)
            label = old_label if pole is lineage.Pole.O else new_label
            if pole is lineage.Pole.O and co < gen:
                warnings.warn(
                    f"{path}:{lineno}: old pole cell in generation {gen} cumulated only {co} old poles",
                    IntegrityWarning,
                    stacklevel=2,
                )
        mgen = _count(v[2])
        if mgen is not None and mgen != gen - 1:
            warnings.warn(f"{path}:{lineno}: mother generation {mgen} for generation {gen}", IntegrityWarning, stacklevel=2)
        rows.append(
            {
                "tree": int(v[0]),
                "label": label,
                "generation": gen,
                "mother_generation": mgen,
                "rate": _val(v[3]),
                "mother_rate": _val(v[4]),
                "consec_old": co,
                "consec_new": cn,
                "mother_consec_old": _count(v[7]),
                "mother_consec_new": _count(v[8]),
                "pole": None if pole is None else pole.value,
            }
        )
    ds = Dataset("wang", pd.DataFrame(rows, columns=COLUMNS) if rows else empty_frame())
    _check_counts(ds, check_counts)
    return ds


def parse(path, fmt: str, check_counts: bool = True) -> Dataset:
    if fmt == "wang":
        return parse_wang(path, check_counts)
    if fmt == "stewart":
        return parse_stewart(path, check_counts)
    raise ValueError(f"unknown format {fmt!r}")


def _fmt_int(v) -> str:
    return "-1." if v is None or pd.isna(v) else f"{int(v)}."


def _fmt_real(v) -> str:
    if pd.isna(v):
        return "-1."
    return repr(float(v))


def format_stewart_line(row) -> str:
    label = row.label
    mother = label >> 1 if label is not None and label > 1 else None
    return "  ".join(
        [
            _fmt_int(row.tree),
            _fmt_int(label),
            _fmt_int(mother),
            _fmt_int(row.generation),
            _fmt_int(row.mother_generation),
            _fmt_real(row.rate),
            _fmt_real(row.mother_rate),
            _fmt_int(row.consec_old),
            _fmt_int(row.consec_new),
            _fmt_int(row.mother_consec_old),
            _fmt_int(row.mother_consec_new),
        ]
    )


def format_wang_line(row) -> str:
    return "  ".join(
        [
            _fmt_int(row.tree),
            _fmt_int(row.generation),
            _fmt_int(row.mother_generation),
            _fmt_real(row.rate),
            _fmt_real(row.mother_rate),
            _fmt_int(row.consec_old),
            _fmt_int(row.consec_new),
            _fmt_int(row.mother_consec_old),
            _fmt_int(row.mother_consec_new),
        ]
    )


def write(ds: Dataset, path, fmt: Optional[str] = None) -> None:
    """Write ``ds`` in a text format; outlier-marked rates are written as ``-1``."""
    fmt = fmt or ds.source
    line = {"wang": format_wang_line, "stewart": format_stewart_line}[fmt]
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for row in ds.frame.itertuples(index=False):
            fh.write(line(row) + "\n")


def to_json(ds: Dataset) -> dict:
    """Serialise a dataset; labels are decimal strings since they exceed 64 bits."""

    def num(v):
        return None if pd.isna(v) else float(v)

    def integer(v):
        return None if v is None or pd.isna(v) else int(v)

    records = [
        {
            "tree": int(r.tree),
            "label": None if r.label is None else str(r.label),
            "generation": int(r.generation),
            "mother_generation": integer(r.mother_generation),
            "rate": num(r.rate),
            "mother_rate": num(r.mother_rate),
            "consec_old": integer(r.consec_old),
            "consec_new": integer(r.consec_new),
            "mother_consec_old": integer(r.mother_consec_old),
            "mother_consec_new": integer(r.mother_consec_new),
            "pole": r.pole,
            "outlier": bool(r.outlier),
            "raw_rate": num(r.raw_rate),
        }
        for r in ds.frame.itertuples(index=False)
    ]
    return {"schema": JSON_SCHEMA, "source": ds.source, "records": records}


def from_json(doc: dict) -> Dataset:
    if doc.get("schema") != JSON_SCHEMA:
        raise ValueError(f"unsupported dataset schema {doc.get('schema')!r}")
    recs = []
    for r in doc["records"]:
        r = dict(r)
        r["label"] = None if r["label"] is None else int(r["label"])
        for k in ("rate", "mother_rate", "raw_rate"):
            if r[k] is None:
                r[k] = np.nan
        recs.append(r)
    frame = pd.DataFrame(recs, columns=COLUMNS) if recs else empty_frame()
    return Dataset(doc["source"], frame)


def save_json(ds: Dataset, path) -> None:
    Path(path).write_text(json.dumps(to_json(ds), indent=1) + "\n")


def load_json(path) -> Dataset:
    return from_json(json.loads(Path(path).read_text()))


# -- growth rates from raw lengths ------------------------------------------


@dataclass
class LengthSeries:
    times: np.ndarray
    lengths: np.ndarray
    complete_life: bool = True

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=float)
        self.lengths = np.asarray(self.lengths, dtype=float)
        if self.times.shape != self.lengths.shape:
            raise ValueError("times and lengths differ in length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")


def fit_growth_rate(series: LengthSeries) -> Optional[float]:
    """Exponential growth rate: OLS slope of log-length against time.

    Returns None when the life is not fully observed, a length is not positive,
    or fewer than three points are available.
    """
    t, x = series.times, series.lengths
    if not series.complete_life or len(t) < 3 or np.any(x <= 0):
        return None
    y = np.log(x)
    tc = t - t.mean()
    return float(np.dot(tc, y - y.mean()) / np.dot(tc, tc))


def read_length_csv(path) -> dict[str, LengthSeries]:
    """Raw lengths, columns ``cell_id,time_minutes,length[,complete_life]``."""
    df = pd.read_csv(path, dtype={"cell_id": str})
    missing = {"cell_id", "time_minutes", "length"} - set(df.columns)
    if missing:
        raise ValueError(f"{path}: missing columns {sorted(missing)}")
    out = {}
    for cid, g in df.groupby("cell_id", sort=False):
        g = g.sort_values("time_minutes")
        complete = bool(g["complete_life"].astype(bool).all()) if "complete_life" in g else True
        out[cid] = LengthSeries(g["time_minutes"].to_numpy(), g["length"].to_numpy(), complete)
    return out


def growth_rates_from_csv(path) -> pd.DataFrame:
    rows = []
    for cid, series in read_length_csv(path).items():
        rate = fit_growth_rate(series)
        rows.append({"cell_id": cid, "growth_rate": MISSING if rate is None else rate})
    return pd.DataFrame(rows, columns=["cell_id", "growth_rate"])
