import numpy as np
import pandas as pd
import pytest

from polegrowth.dataset import Dataset
from polegrowth import lineage


def comb_tree_frame(tree_id, old_rates, new_rates, root_rate=np.nan):
    """Wang-shaped frame for one tree; ``old_rates[g-1]``/``new_rates[g-1]`` are generation g."""
    rows = []
    spine = [root_rate, *old_rates]
    for g in range(1, len(old_rates) + 1):
        nl, ol = lineage.comb_labels(g)
        for label, rate, pole in ((ol, old_rates[g - 1], "O"), (nl, new_rates[g - 1], "N")):
            rows.append(
                {
                    "tree": tree_id,
                    "label": label,
                    "generation": g,
                    "mother_generation": g - 1,
                    "rate": rate,
                    "mother_rate": spine[g - 1],
                    "consec_old": g if pole == "O" else 0,
                    "consec_new": 0 if pole == "O" else 1,
                    "mother_consec_old": g - 1 if g > 1 else None,
                    "mother_consec_new": 0 if g > 1 else None,
                    "pole": pole,
                }
            )
    return pd.DataFrame(rows)


def comb_dataset(trees: dict) -> Dataset:
    """``trees`` maps tree id -> (old_rates, new_rates[, root])."""
    return Dataset("wang", pd.concat([comb_tree_frame(t, *v) for t, v in trees.items()], ignore_index=True))


@pytest.fixture
def rng():
    return np.random.default_rng(20160627)


def _pattern(n=41):
    return np.linspace(-1.5, 1.5, n)


def steady_rates(tid, n_gen, spread=0.005, old_level=0.030, new_level=0.031):
    """Deterministic, bounded within-tree variation (no accidental 3-sigma cells)."""
    z = _pattern()
    old = [old_level + spread * z[(7 * g + tid) % z.size] for g in range(1, n_gen + 1)]
    new = [new_level + spread * z[(11 * g + 3 + tid) % z.size] for g in range(1, n_gen + 1)]
    return old, new


def preprocessing_fixture(n_gen=30):
    """Five regular trees, a 19-generation tree (6), a shifted tree (7), a tree with one outlier (8).

    Returns the dataset, the shift applied to tree 7 and the location (tree, generation) of
    the outlier cell, which sits 4 sigma above the old-pole median of tree 8.
    """
    from polegrowth import preprocess as pp

    trees = {t: steady_rates(t, n_gen) for t in range(1, 6)}
    trees[6] = steady_rates(6, 19)
    base = comb_dataset({t: trees[t] for t in range(1, 6)})
    sigma0 = pp.robust_stats(base).sigma
    old, new = steady_rates(7, n_gen)
    shift = 2 * sigma0
    trees[7] = ([r + shift for r in old], [r + shift for r in new])
    old, new = steady_rates(8, n_gen)
    old = list(old)
    med = float(np.median(old))
    old[14] = med + 4 * sigma0
    trees[8] = (old, new)
    return comb_dataset(trees), shift, (8, 15)


# -- acceptance summary ------------------------------------------------------------

ACCEPTANCE = {}


def record(criterion: int, title: str, ok, detail: str = "") -> None:
    """Store a verdict (True, False or None for skipped) for the end-of-run summary."""
    ACCEPTANCE[criterion] = (title, ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        verdict = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
        terminalreporter.write_line(f"criterion {n:2d} {verdict}  {title}" + (f"  ({detail})" if detail else ""))
