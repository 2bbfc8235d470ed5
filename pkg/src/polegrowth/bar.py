"""Asymmetric bifurcating autoregressive (BAR) model.

Daughters of cell ``k`` follow

    X_{2k}   = a0 + b0 X_k + eps_{2k}      (new pole)
    X_{2k+1} = a1 + b1 X_k + eps_{2k+1}    (old pole)

Estimation is least squares with an observation indicator: a mother/daughter
pair enters the sums only when both rates are available.  The normal matrix is
block diagonal, one 2x2 block per daughter type.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd
from scipy.signal import lfilter

from . import distributions as dist
from . import lineage
from .dataset import COLUMNS, Dataset, mother_daughter_pairs

PARAM_NAMES = ("a0", "b0", "a1", "b1")
COND_LIMIT = 1e12


class RankDeficiencyError(np.linalg.LinAlgError):
    def __init__(self, block: str, message: str):
        super().__init__(message)
        self.block = block


@dataclass(frozen=True)
class BarParams:
    a0: float
    b0: float
    a1: float
    b1: float
    noise_sd: float = 0.0
    noise_correlation: float = 0.0

    @property
    def theta(self) -> np.ndarray:
        return np.array([self.a0, self.b0, self.a1, self.b1])

    @property
    def stationary(self) -> bool:
        return abs(self.b0) < 1 and abs(self.b1) < 1

    @property
    def old_pole_fixed_point(self) -> float:
        return self.a1 / (1.0 - self.b1)

    @property
    def new_pole_mean(self) -> float:
        """Stationary mean of a new-pole daughter of a spine cell."""
        return self.a0 + self.b0 * self.old_pole_fixed_point


@dataclass
class BarEstimate:
    theta_hat: np.ndarray
    S_n: np.ndarray
    cov: np.ndarray
    noise_var_hat: float
    n_pairs: tuple[int, int]
    n_generations: int
    n_trees: int
    level: float = 0.95
    ci: list = field(default_factory=list)
    relative_noise_var: float = math.nan

    @property
    def standard_errors(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))

    def to_dict(self) -> dict:
        return {
            "theta_hat": dict(zip(PARAM_NAMES, map(float, self.theta_hat))),
            "ci": {k: [float(lo), float(hi)] for k, (lo, hi) in zip(PARAM_NAMES, self.ci)},
            "level": self.level,
            "standard_errors": dict(zip(PARAM_NAMES, map(float, self.standard_errors))),
            "S_n": self.S_n.tolist(),
            "noise_var_hat": self.noise_var_hat,
            "relative_noise_var": self.relative_noise_var,
            "n_pairs": {"new_pole": self.n_pairs[0], "old_pole": self.n_pairs[1]},
            "n_generations": self.n_generations,
            "n_trees": self.n_trees,
        }


# -- simulation --------------------------------------------------------------


def _tree_rngs(seed, n_trees: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n_trees)]


def _check_sim_args(params: BarParams, n_generations: int, missing_prob: float) -> None:
    if n_generations < 2:
        raise ValueError("need at least two generations")
    if not 0.0 <= missing_prob < 1.0:
        raise ValueError(f"missing_prob must be in [0, 1), got {missing_prob}")
    if params.noise_sd < 0:
        raise ValueError("noise_sd must be nonnegative")
    if not -1.0 <= params.noise_correlation <= 1.0:
        raise ValueError("noise_correlation must be in [-1, 1]")


def _sister_noise(rng: np.random.Generator, params: BarParams, shape) -> tuple[np.ndarray, np.ndarray]:
    z = rng.standard_normal((2,) + tuple(shape))
    rho = params.noise_correlation
    eps_old = params.noise_sd * z[1]
    eps_new = params.noise_sd * (rho * z[1] + math.sqrt(1.0 - rho * rho) * z[0])
    return eps_new, eps_old


def _initial(rng: np.random.Generator, params: BarParams, x1: Optional[float], x1_sd: Optional[float]) -> float:
    if x1 is not None:
        return float(x1)
    if x1_sd is None:
        x1_sd = params.noise_sd / math.sqrt(1.0 - params.b1**2) if abs(params.b1) < 1 else params.noise_sd
    return float(params.old_pole_fixed_point + x1_sd * rng.standard_normal())


def simulate_comb_arrays(
    params: BarParams,
    n_generations: int,
    n_trees: int,
    missing_prob: float = 0.0,
    seed=None,
    x1: Optional[float] = None,
    x1_sd: Optional[float] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(spine, new)`` rate arrays with NaN where a cell is hidden.

    ``spine`` is ``n_trees x (n + 1)`` with column g holding generation g (the
    root is column 0); ``new`` is ``n_trees x n`` with column g - 1 holding the
    generation-g new-pole cell.
    """
    _check_sim_args(params, n_generations, missing_prob)
    n = n_generations
    spine = np.empty((n_trees, n + 1))
    new = np.empty((n_trees, n))
    for j, rng in enumerate(_tree_rngs(seed, n_trees)):
        root = _initial(rng, params, x1, x1_sd)
        eps_new, eps_old = _sister_noise(rng, params, (n,))
        # spine recursion X_g = a1 + b1 X_{g-1} + eps_g, started at the root
        drive = params.a1 + eps_old
        zi = np.array([params.b1 * root])
        spine[j, 0] = root
        spine[j, 1:] = lfilter([1.0], [1.0, -params.b1], drive, zi=zi)[0]
        new[j] = params.a0 + params.b0 * spine[j, :-1] + eps_new
        if missing_prob > 0:
            spine[j, rng.random(n + 1) < missing_prob] = np.nan
            new[j, rng.random(n) < missing_prob] = np.nan
    return spine, new


def comb_frame(spine: np.ndarray, new: np.ndarray, tree_ids=None) -> pd.DataFrame:
    """Wang-schema frame from spine/new-pole arrays (NaN = missing)."""
    n_trees, n = new.shape
    tree_ids = np.arange(1, n_trees + 1) if tree_ids is None else np.asarray(tree_ids)
    gens = np.arange(1, n + 1)
    new_labels = [lineage.comb_labels(g)[0] for g in gens]
    old_labels = [lineage.comb_labels(g)[1] for g in gens]
    blocks = []
    for j in range(n_trees):
        mother_rate = spine[j, :-1]
        mother_co = np.where(gens > 1, gens - 1, -1)
        for is_old in (False, True):
            blocks.append(
                pd.DataFrame(
                    {
                        "tree": tree_ids[j],
                        "label": old_labels if is_old else new_labels,
                        "generation": gens,
                        "mother_generation": gens - 1,
                        "rate": spine[j, 1:] if is_old else new[j],
                        "mother_rate": mother_rate,
                        "consec_old": gens if is_old else 0,
                        "consec_new": 0 if is_old else 1,
                        "mother_consec_old": mother_co,
                        "mother_consec_new": 0,
                        "pole": "O" if is_old else "N",
                        "_order": 2 * gens - (1 if is_old else 0),
                    }
                )
            )
    frame = pd.concat(blocks, ignore_index=True)
    frame = frame.sort_values(["tree", "_order"], kind="stable").drop(columns="_order")
    frame["mother_consec_old"] = frame["mother_consec_old"].astype("Int64").mask(frame["mother_consec_old"] < 0)
    frame["mother_consec_new"] = frame["mother_consec_new"].astype("Int64").mask(frame["generation"] == 1)
    return frame


def simulate_comb(
    params: BarParams,
    n_generations: int,
    n_trees: int,
    missing_prob: float = 0.0,
    seed=None,
    x1: Optional[float] = None,
    x1_sd: Optional[float] = None,
) -> Dataset:
    """Simulate comb-observed trees in the Wang schema.

    Each tree starts from a root rate drawn around the old-pole fixed point
    (or at ``x1``), then generates both daughters of every spine cell.  Every
    cell, the root included, is hidden independently with ``missing_prob``.
    Each tree draws from its own child of ``SeedSequence(seed)``.
    """
    spine, new = simulate_comb_arrays(params, n_generations, n_trees, missing_prob, seed, x1, x1_sd)
    return Dataset("wang", comb_frame(spine, new))


def simulate_full_tree(
    params: BarParams,
    n_generations: int,
    n_trees: int,
    missing_prob: float = 0.0,
    seed=None,
    x1: Optional[float] = None,
    x1_sd: Optional[float] = None,
) -> Dataset:
    """Simulate complete trees (generations 0..n) in the Stewart schema."""
    _check_sim_args(params, n_generations, missing_prob)
    n_cells = 2 ** (n_generations + 1) - 1
    labels = np.arange(1, n_cells + 1)
    gen = np.floor(np.log2(labels)).astype(int)
    cons = {}
    for k in labels[labels >= 4]:
        cons[int(k)] = lineage.consecutive_poles(int(k))
    frames = []
    for j, rng in enumerate(_tree_rngs(seed, n_trees)):
        x = np.empty(n_cells + 1)
        x[1] = _initial(rng, params, x1, x1_sd)
        for g in range(1, n_generations + 1):
            mothers = np.arange(2 ** (g - 1), 2**g)
            eps_new, eps_old = _sister_noise(rng, params, mothers.shape)
            x[2 * mothers] = params.a0 + params.b0 * x[mothers] + eps_new
            x[2 * mothers + 1] = params.a1 + params.b1 * x[mothers] + eps_old
        obs = x[1:].copy()
        if missing_prob > 0:
            obs[rng.random(n_cells) < missing_prob] = np.nan
        mrate = np.concatenate([[np.nan], obs[labels[1:] // 2 - 1]])
        rows = {
            "tree": j + 1,
            "label": [int(k) for k in labels],
            "generation": gen,
            "mother_generation": np.where(gen > 0, gen - 1, -1),
            "rate": obs,
            "mother_rate": mrate,
        }
        co, cn, mco, mcn = [], [], [], []
        for k in labels:
            k = int(k)
            c = cons.get(k)
            co.append(None if c is None else (c[0] if c[1] is lineage.Pole.O else 0))
            cn.append(None if c is None else (c[0] if c[1] is lineage.Pole.N else 0))
            mc = cons.get(k >> 1)
            mco.append(None if mc is None else (mc[0] if mc[1] is lineage.Pole.O else 0))
            mcn.append(None if mc is None else (mc[0] if mc[1] is lineage.Pole.N else 0))
        f = pd.DataFrame(rows)
        f["consec_old"], f["consec_new"] = co, cn
        f["mother_consec_old"], f["mother_consec_new"] = mco, mcn
        f["mother_generation"] = f["mother_generation"].astype("Int64").mask(f["mother_generation"] < 0)
        f["pole"] = [None if g < 2 else ("O" if k & 1 else "N") for k, g in zip(rows["label"], gen)]
        frames.append(f)
    return Dataset("stewart", pd.concat(frames, ignore_index=True)[[c for c in COLUMNS if c in frames[0]]])


# -- estimation ----------------------------------------------------------------


def _tree_sums(mother: np.ndarray, rate: np.ndarray, pole: np.ndarray) -> np.ndarray:
    """Per-tree normal-equation terms: rows = block (0 new, 1 old), cols = (n, sum m, sum m^2, sum d, sum m d)."""
    out = np.zeros((2, 5))
    ok = ~(np.isnan(mother) | np.isnan(rate))
    for i in (0, 1):
        sel = ok & (pole == i)
        m, d = mother[sel], rate[sel]
        out[i] = (sel.sum(), m.sum(), (m * m).sum(), d.sum(), (m * d).sum())
    return out


def normal_equations(pairs: pd.DataFrame, threads: int = 1) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Block matrix S_n, right-hand side and pair counts from mother/daughter pairs.

    Per-tree partial sums are added in increasing tree id order, so the result
    does not depend on ``threads``.
    """
    groups = [g for _, g in pairs.groupby("tree", sort=True)]

    def work(g):
        return _tree_sums(g["mother_rate"].to_numpy(float), g["rate"].to_numpy(float), g["pole"].to_numpy(int))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, groups))
    else:
        parts = [work(g) for g in groups]
    total = np.zeros((2, 5))
    for p in parts:
        total = total + p
    S = np.zeros((4, 4))
    rhs = np.zeros(4)
    for i in (0, 1):
        cnt, sm, smm, sd, smd = total[i]
        S[2 * i : 2 * i + 2, 2 * i : 2 * i + 2] = [[cnt, sm], [sm, smm]]
        rhs[2 * i : 2 * i + 2] = [sd, smd]
    return S, rhs, total[:, 0].astype(int)


def _solve_block(block: np.ndarray, rhs: np.ndarray, name: str) -> tuple[np.ndarray, np.ndarray]:
    (p, q), (_, r) = block
    det = p * r - q * q
    if p == 0 or det <= 0:
        raise RankDeficiencyError(name, f"{name} block of S_n is singular (observed pairs: {int(p)})")
    # 2-norm condition number of a symmetric 2x2 matrix
    tr_half = 0.5 * (p + r)
    disc = math.sqrt(max(tr_half**2 - det, 0.0))
    lam_min = tr_half - disc
    cond = (tr_half + disc) / lam_min if lam_min > 0 else math.inf
    if cond > COND_LIMIT:
        raise RankDeficiencyError(name, f"{name} block of S_n is ill-conditioned (cond = {cond:.3g})")
    inv = np.array([[r, -q], [-q, p]]) / det
    return inv @ rhs, inv


def _estimate(pairs: pd.DataFrame, level: float, threads: int) -> BarEstimate:
    S, rhs, counts = normal_equations(pairs, threads)
    theta = np.zeros(4)
    Sinv = np.zeros((4, 4))
    for i, name in ((0, "new-pole (S0)"), (1, "old-pole (S1)")):
        sl = slice(2 * i, 2 * i + 2)
        theta[sl], Sinv[sl, sl] = _solve_block(S[sl, sl], rhs[sl], name)
    m = pairs["mother_rate"].to_numpy(float)
    d = pairs["rate"].to_numpy(float)
    pole = pairs["pole"].to_numpy(int)
    ok = ~(np.isnan(m) | np.isnan(d))
    fitted = np.where(pole == 1, theta[2] + theta[3] * m, theta[0] + theta[1] * m)
    resid = (d - fitted)[ok]
    n_pairs = int(ok.sum())
    noise_var = float(resid @ resid) / n_pairs
    spread = float(np.var(d[ok])) if n_pairs > 1 else math.nan
    est = BarEstimate(
        theta_hat=theta,
        S_n=S,
        cov=noise_var * Sinv,
        noise_var_hat=noise_var,
        n_pairs=(int(counts[0]), int(counts[1])),
        n_generations=int(pairs.loc[ok, "generation"].max()) if n_pairs else 0,
        n_trees=int(pairs.loc[ok, "tree"].nunique()),
        relative_noise_var=noise_var / spread if spread and spread > 0 else math.nan,
    )
    est.ci = confidence_intervals(est, level)
    est.level = level
    return est


def estimate_comb(ds: Dataset, level: float = 0.95, threads: int = 1) -> BarEstimate:
    """Least-squares BAR estimate from the comb (spine cells and their sisters)."""
    return _estimate(mother_daughter_pairs(ds.frame, comb_only=True), level, threads)


def estimate_full_tree(ds: Dataset, level: float = 0.95, threads: int = 1) -> BarEstimate:
    """Same estimator with the sums running over every mother/daughter pair."""
    return _estimate(mother_daughter_pairs(ds.frame, comb_only=False), level, threads)


def confidence_intervals(est: BarEstimate, level: float = 0.95) -> list[tuple[float, float]]:
    """Normal intervals theta_i +- z * sqrt(sigma^2 (S_n^-1)_ii)."""
    z = dist.norm_ppf(0.5 + level / 2.0)
    half = z * np.sqrt(np.clip(np.diag(est.cov), 0.0, None))
    return [(float(t - h), float(t + h)) for t, h in zip(est.theta_hat, half)]
