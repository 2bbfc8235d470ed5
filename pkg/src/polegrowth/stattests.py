"""Regression and hypothesis tests used by the analysis pipelines.

Every function drops missing values (NaN) itself, listwise, and reports the
sample sizes it actually used.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.signal import lfilter

from . import distributions as dist


class DegenerateSampleError(ValueError):
    pass


class RankDeficientError(np.linalg.LinAlgError):
    def __init__(self, message: str, columns: Sequence[str] = ()):
        super().__init__(message)
        self.columns = list(columns)


class ArmaConvergenceError(RuntimeError):
    def __init__(self, message: str, best_params, best_css: float):
        super().__init__(message)
        self.best_params = best_params
        self.best_css = best_css


@dataclass
class TestResult:
    statistic: float
    p_value: float
    ci: Optional[tuple[float, float]] = None
    n1: int = 0
    n2: int = 0
    level: Optional[float] = None
    details: dict = field(default_factory=dict)

    __test__ = False  # not a pytest class

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "p_value": self.p_value,
            "ci": None if self.ci is None else list(self.ci),
            "n1": self.n1,
            "n2": self.n2,
            "level": self.level,
            **self.details,
        }


@dataclass
class OlsFit:
    coefficients: np.ndarray
    standard_errors: np.ndarray
    t_stats: np.ndarray
    p_values: np.ndarray
    residuals: np.ndarray
    r_squared: float
    sigma2: float
    df_resid: int
    n: int
    names: list

    def coef(self, name: str) -> float:
        return float(self.coefficients[self.names.index(name)])

    def p(self, name: str) -> float:
        return float(self.p_values[self.names.index(name)])


def _clean(*arrays):
    arrs = [np.asarray(a, dtype=float) for a in arrays]
    ok = np.ones(arrs[0].shape[0], dtype=bool)
    for a in arrs:
        ok &= ~np.isnan(a).reshape(a.shape[0], -1).any(axis=1) if a.size else ok
    return [a[ok] for a in arrs]


def _collinear_columns(X: np.ndarray, names: list) -> list:
    _, s, vt = np.linalg.svd(X, full_matrices=False)
    tol = s.max() * max(X.shape) * np.finfo(float).eps if s.size else 0.0
    null = vt[s <= tol]
    if null.size == 0:
        return []
    weight = np.abs(null).max(axis=0)
    return [names[j] for j in np.flatnonzero(weight > 1e-8)]


def ols(y, X, names: Optional[Sequence[str]] = None) -> OlsFit:
    """Least squares with coefficient t-tests.

    ``X`` must already contain the intercept column.  Standard errors use
    sigma^2 = RSS / (n - p) and p-values are two-sided from t(n - p).
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y, X = _clean(y, X)
    n, p = X.shape
    names = list(names) if names is not None else [f"x{j}" for j in range(p)]
    if n <= p:
        raise DegenerateSampleError(f"{n} complete rows for {p} coefficients")
    if np.linalg.matrix_rank(X) < p:
        cols = _collinear_columns(X, names)
        raise RankDeficientError(f"design is rank deficient; collinear columns: {', '.join(cols)}", cols)
    q, r = np.linalg.qr(X)
    beta = np.linalg.solve(r, q.T @ y)
    resid = y - X @ beta
    # one refinement step keeps the normal equations tight on badly scaled data
    beta = beta + np.linalg.solve(r, q.T @ resid)
    resid = y - X @ beta
    df = n - p
    rss = float(resid @ resid)
    sigma2 = rss / df
    rinv = np.linalg.inv(r)
    se = np.sqrt(sigma2 * np.einsum("ij,ij->i", rinv, rinv))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = beta / se
    t = np.where(se == 0, np.where(beta == 0, 0.0, np.sign(beta) * np.inf), t)
    pv = np.array([dist.t_two_sided_p(float(ti), df) for ti in t])
    tss = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - rss / tss if tss > 0 else (1.0 if rss == 0 else 0.0)
    return OlsFit(beta, se, t, pv, resid, r2, sigma2, df, n, names)


def ols_formula(y, regressors: dict) -> OlsFit:
    """OLS of ``y`` on named regressors plus an intercept (named ``intercept``)."""
    y = np.asarray(y, dtype=float)
    cols = [np.ones_like(y)] + [np.asarray(v, dtype=float) for v in regressors.values()]
    return ols(y, np.column_stack(cols), ["intercept", *regressors])


def mean_ci(x, level: float) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    n = x.size
    half = dist.t_ppf(0.5 + level / 2.0, n - 1) * x.std(ddof=1) / math.sqrt(n)
    m = float(x.mean())
    return m - half, m + half


def student_two_sample(x, y, level: float = 0.95) -> TestResult:
    """Welch two-sample t test, with a t confidence interval for each mean.

    ``ci`` holds the interval for mean(x) - mean(y).
    """
    (x,) = _clean(x)
    (y,) = _clean(y)
    n1, n2 = x.size, y.size
    if n1 < 2 or n2 < 2:
        raise DegenerateSampleError("each sample needs at least two values")
    m1, m2 = float(x.mean()), float(y.mean())
    v1, v2 = float(x.var(ddof=1)) / n1, float(y.var(ddof=1)) / n2
    se2 = v1 + v2
    diff = m1 - m2
    if se2 == 0:
        t = 0.0 if diff == 0 else math.copysign(math.inf, diff)
        df = float(n1 + n2 - 2)
        p = 1.0 if diff == 0 else 0.0
        half = 0.0
    else:
        t = diff / math.sqrt(se2)
        df = se2**2 / (v1**2 / (n1 - 1) + v2**2 / (n2 - 1))
        p = dist.t_two_sided_p(t, df)
        half = dist.t_ppf(0.5 + level / 2.0, df) * math.sqrt(se2)
    return TestResult(
        statistic=t,
        p_value=p,
        ci=(diff - half, diff + half),
        n1=n1,
        n2=n2,
        level=level,
        details={
            "df": df,
            "mean_x": m1,
            "mean_y": m2,
            "ci_mean_x": mean_ci(x, level),
            "ci_mean_y": mean_ci(y, level),
        },
    )


def correlation_ci(x, y, level: float = 0.95) -> TestResult:
    """Pearson correlation with a Fisher z interval."""
    x, y = _clean(x, y)
    n = x.size
    if n < 4:
        raise DegenerateSampleError(f"correlation interval needs n >= 4, got {n}")
    xc, yc = x - x.mean(), y - y.mean()
    sxx, syy = float(xc @ xc), float(yc @ yc)
    if sxx == 0 or syy == 0:
        raise DegenerateSampleError("correlation undefined for a constant sample")
    r = max(-1.0, min(1.0, float(xc @ yc) / math.sqrt(sxx * syy)))
    if abs(r) == 1.0:
        ci = (r, r)
        p = 0.0
    else:
        z = math.atanh(r)
        half = dist.norm_ppf(0.5 + level / 2.0) / math.sqrt(n - 3)
        ci = (math.tanh(z - half), math.tanh(z + half))
        p = dist.t_two_sided_p(r * math.sqrt((n - 2) / (1 - r * r)), n - 2)
    return TestResult(statistic=r, p_value=p, ci=ci, n1=n, n2=n, level=level)


def ks_statistic(x, y) -> float:
    x, y = np.sort(x), np.sort(y)
    grid = np.concatenate([x, y])
    fx = np.searchsorted(x, grid, side="right") / x.size
    fy = np.searchsorted(y, grid, side="right") / y.size
    return float(np.abs(fx - fy).max())


def ks_two_sample(x, y) -> TestResult:
    """Two-sample Kolmogorov-Smirnov test with the asymptotic p-value."""
    (x,) = _clean(x)
    (y,) = _clean(y)
    if x.size == 0 or y.size == 0:
        raise DegenerateSampleError("KS test needs two nonempty samples")
    d = ks_statistic(x, y)
    n_eff = x.size * y.size / (x.size + y.size)
    p = dist.kolmogorov_sf(dist.ks_lambda(d, n_eff))
    return TestResult(statistic=d, p_value=p, n1=int(x.size), n2=int(y.size))


def ks_uniform(u) -> TestResult:
    """One-sample KS test of ``u`` against U(0, 1)."""
    (u,) = _clean(u)
    n = u.size
    if n == 0:
        raise DegenerateSampleError("KS test needs a nonempty sample")
    u = np.sort(u)
    i = np.arange(1, n + 1)
    d = float(max((i / n - u).max(), (u - (i - 1) / n).max()))
    p = dist.kolmogorov_sf(dist.ks_lambda(d, n))
    return TestResult(statistic=d, p_value=p, n1=n)


# -- ARMA(1,1) by conditional sum of squares -------------------------------


@dataclass
class Arma11Fit:
    phi: float
    theta: float
    intercept: float
    residuals: np.ndarray
    css: float
    converged: bool = True


def arma11_residuals(x, phi: float, theta: float, mu: float) -> np.ndarray:
    """e_t = (x_t - mu) - phi (x_{t-1} - mu) - theta e_{t-1}, with x_0 - mu = 0 and e_0 = 0."""
    yv = np.asarray(x, dtype=float) - mu
    u = yv.copy()
    u[1:] -= phi * yv[:-1]
    return lfilter([1.0], [1.0, theta], u)


def arma11_css(x, phi: float, theta: float, mu: float) -> float:
    e = arma11_residuals(x, phi, theta, mu)
    return float(e @ e)


ARMA_BOUND = 0.99
ARMA_STARTS = (-0.5, 0.0, 0.5)


def arma11_fit(series, bound: float = ARMA_BOUND, max_iter: int = 4000) -> Arma11Fit:
    """Fit ARMA(1,1) with mean by minimizing the conditional sum of squares.

    Nelder-Mead is run from a 3 x 3 grid of (phi, theta) starts inside
    ``[-bound, bound]^2`` on the standardized series; the best end point wins.
    """
    (x,) = _clean(series)
    if x.size < 10:
        raise DegenerateSampleError(f"ARMA(1,1) fit needs at least 10 points, got {x.size}")
    loc, scale = float(x.mean()), float(x.std())
    if np.ptp(x) == 0 or not np.isfinite(scale):
        raise DegenerateSampleError("constant series")
    z = (x - loc) / scale

    def objective(v):
        return arma11_css(z, v[0], v[1], v[2])

    bounds = [(-bound, bound), (-bound, bound), (None, None)]
    best = None
    for phi0 in ARMA_STARTS:
        for theta0 in ARMA_STARTS:
            res = minimize(
                objective,
                x0=np.array([phi0, theta0, 0.0]),
                method="Nelder-Mead",
                bounds=bounds,
                options={"maxiter": max_iter, "xatol": 1e-7, "fatol": 1e-10},
            )
            if best is None or res.fun < best.fun:
                best = res
    if not best.success:
        raise ArmaConvergenceError(
            f"ARMA(1,1) CSS search did not converge: {best.message}", best.x.tolist(), float(best.fun) * scale**2
        )
    phi, theta, mu_z = (float(v) for v in best.x)
    mu = loc + scale * mu_z
    e = arma11_residuals(x, phi, theta, mu)
    return Arma11Fit(phi, theta, mu, e, float(e @ e))
