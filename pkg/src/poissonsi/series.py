"""Truncated Poisson series with certified remainder bounds.

Every expectation of a function of a Poisson count that the library treats as
"exact" goes through :func:`poisson_expect`.  The series is summed up to an
index ``K`` and the remainder is bounded by a geometric majorant; ``K`` is
doubled until that bound drops below the requested tolerance.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import gammaln

__all__ = [
    "SeriesResult",
    "initial_truncation",
    "tail_bound",
    "poisson_expect",
    "mixed_moment",
    "central_abs_moment",
]

MAX_TRUNCATION = 1 << 22


@dataclass(frozen=True)
class SeriesResult:
    value: float
    error_bound: float
    truncation: int


def initial_truncation(lam: float) -> int:
    return max(50, math.ceil(lam + 20.0 * math.sqrt(lam) + 20.0))


def _log_pmf(k: np.ndarray, lam: float) -> np.ndarray:
    return k * math.log(lam) - lam - gammaln(k + 1.0)


def tail_bound(lam: float, K: int, degree: float, shift: float = 0.0, scale: float = 1.0) -> float:
    """Bound ``sum_{k>=K} scale * (k + shift)**degree * P(N = k)``.

    Consecutive terms have ratio ``((k+1+shift)/(k+shift))**degree * lam/(k+1)``,
    which is non-increasing in ``k``; once it is below one at ``k = K`` the tail
    is dominated by a geometric series.  Returns ``inf`` when ``K`` is too small
    for the ratio argument.
    """
    if lam == 0.0:
        return 0.0
    base = K + shift
    if base <= 0:
        return math.inf
    rho = ((base + 1.0) / base) ** degree * lam / (K + 1.0)
    if rho >= 1.0:
        return math.inf
    log_term = math.log(scale) + degree * math.log(base) + float(_log_pmf(np.float64(K), lam))
    return math.exp(log_term) / (1.0 - rho)


def poisson_expect(
    fn: Callable[[np.ndarray], np.ndarray],
    lam: float,
    tolerance: float,
    degree: float,
    shift: float = 0.0,
    scale: float = 1.0,
    upper: int | None = None,
) -> SeriesResult:
    """Certified ``E fn(N)`` for ``N ~ Poisson(lam)``.

    ``|fn(k)| <= scale * (k + shift)**degree`` must hold for all large ``k``.
    When ``upper`` is given, ``fn`` vanishes above it and the sum is finite.
    """
    if not (math.isfinite(lam) and lam >= 0.0):
        raise ValueError(f"Poisson parameter must be finite and non-negative, got {lam}")
    if not (tolerance > 0.0 and math.isfinite(tolerance)):
        raise ValueError(f"tolerance must be positive and finite, got {tolerance}")
    if lam == 0.0:
        return SeriesResult(float(fn(np.zeros(1))[0]), 0.0, 1)
    if upper is not None:
        if upper < 0:
            return SeriesResult(0.0, 0.0, 0)
        k = np.arange(upper + 1, dtype=float)
        terms = fn(k) * np.exp(_log_pmf(k, lam))
        return SeriesResult(math.fsum(terms), 0.0, upper + 1)
    K = initial_truncation(lam)
    while True:
        bound = tail_bound(lam, K, degree, shift, scale)
        if bound < tolerance:
            break
        K *= 2
        if K > MAX_TRUNCATION:
            raise ArithmeticError(f"series for lam={lam} did not certify below {tolerance}")
    k = np.arange(K, dtype=float)
    terms = fn(k) * np.exp(_log_pmf(k, lam))
    return SeriesResult(math.fsum(terms), bound, K)


def mixed_moment(lam: float, power: int, bound: int | None, tolerance: float) -> SeriesResult:
    """``E[N**power * 1{N <= bound}]``; ``bound=None`` drops the indicator."""
    if power < 0:
        raise ValueError("power must be non-negative")
    if bound is not None:
        return poisson_expect(lambda k: k**power, lam, tolerance, power, upper=bound)
    return poisson_expect(lambda k: k**power, lam, tolerance, power)


def central_abs_moment(lam: float, p: float, tolerance: float = 1e-12) -> float:
    """``E|N - lam|**p`` for ``N ~ Poisson(lam)``, remainder below ``tolerance``."""
    for name, v in (("lambda", lam), ("p", p), ("tolerance", tolerance)):
        if not math.isfinite(v):
            raise ValueError(f"{name} must be finite, got {v}")
    if lam < 0.0:
        raise ValueError("lambda must be non-negative")
    if p < 1.0:
        raise ValueError("p must be at least 1")
    if lam == 0.0:
        return 0.0
    # for k >= K > lam, |k - lam| <= k
    return poisson_expect(lambda k: np.abs(k - lam) ** p, lam, tolerance, p).value
