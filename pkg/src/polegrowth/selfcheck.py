"""Cross-checks of the tail functions against independent routes.

The Student tail is compared with adaptive quadrature of the t density, the
Kolmogorov tail with its Jacobi-theta dual series.
"""
from __future__ import annotations

import math

from scipy import integrate

from . import distributions as dist

T_GRID = [(t, df) for df in (1, 2, 3, 5, 10, 30, 100, 1000) for t in (0.0, 0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 5.0, 10.0)]
LAMBDA_GRID = [0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.2, 1.5, 2.0, 2.5, 3.0]
TOL = 1e-8


def t_sf_quadrature(t: float, df: float) -> float:
    logc = math.lgamma((df + 1) / 2) - math.lgamma(df / 2) - 0.5 * math.log(df * math.pi)

    def pdf(x):
        return math.exp(logc - (df + 1) / 2 * math.log1p(x * x / df))

    val, _ = integrate.quad(pdf, t, math.inf, epsabs=1e-14, epsrel=1e-12, limit=200)
    return val


def kolmogorov_sf_dual(lam: float, terms: int = 50) -> float:
    """1 - sqrt(2 pi)/lam * sum_k exp(-(2k-1)^2 pi^2 / (8 lam^2))."""
    s = sum(math.exp(-((2 * k - 1) ** 2) * math.pi**2 / (8 * lam * lam)) for k in range(1, terms + 1))
    return 1.0 - math.sqrt(2 * math.pi) / lam * s


def run() -> list[tuple[str, float, bool]]:
    """Return (check name, worst absolute error, passed) per family."""
    worst_t = max(abs(dist.t_sf(t, df) - t_sf_quadrature(t, df)) for t, df in T_GRID)
    worst_k = max(abs(dist.kolmogorov_sf(x) - kolmogorov_sf_dual(x)) for x in LAMBDA_GRID)
    return [
        ("student t upper tail vs quadrature", worst_t, worst_t < TOL),
        ("kolmogorov tail vs dual series", worst_k, worst_k < TOL),
    ]
