"""Student-t distribution, one-sample t-test, Bonferroni correction.

Everything here is pure Python on floats so that p-values and quantiles come
from one primitive: the regularized incomplete beta function, evaluated by
its continued fraction (modified Lentz).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .errors import TooFewSamples, ZeroVariance

_FPMIN = 1e-300
_EPS = 1e-16
_MAX_CF_ITER = 100_000


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for I_x(a, b); converges fast for x < (a+1)/(a+b+2)."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _FPMIN:
        d = _FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_CF_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((qap + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b})")


def betainc(a: float, b: float, x: float, xc: float | None = None) -> float:
    """Regularized incomplete beta I_x(a, b).

    ``xc`` may carry ``1 - x`` computed without cancellation by the caller.
    """
    if a <= 0 or b <= 0:
        raise ValueError("betainc requires a > 0 and b > 0")
    if xc is None:
        xc = 1.0 - x
    if x <= 0.0:
        return 0.0
    if xc <= 0.0:
        return 1.0
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log(xc)
    )
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, xc) / b


def student_t_cdf(x: float, df: float) -> float:
    """CDF of Student's t with ``df`` degrees of freedom."""
    if df <= 0:
        raise ValueError("df must be positive")
    if math.isnan(x):
        return math.nan
    if x == 0.0:
        return 0.5
    if math.isinf(x):
        return 1.0 if x > 0 else 0.0
    t2 = x * x
    denom = df + t2
    # two-sided tail mass P(|T| > |x|)
    tail = betainc(0.5 * df, 0.5, df / denom, t2 / denom)
    if x > 0:
        return 1.0 - 0.5 * tail
    return 0.5 * tail


def student_t_sf(x: float, df: float) -> float:
    """Upper tail P(T > x), accurate when the tail is tiny."""
    return student_t_cdf(-x, df)


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def student_t_isf(q: float, df: float, tol: float = 1e-13) -> float:
    """Value ``x`` with upper tail ``P(T > x) = q``, by bisection.

    Bisection runs on the tail mass itself, so small ``q`` (the Bonferroni
    regime) keeps full relative precision.
    """
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie strictly between 0 and 1")
    if q == 0.5:
        return 0.0
    if q > 0.5:
        return -student_t_isf(1.0 - q, df, tol)
    lo, hi = 0.0, 1.0
    while student_t_sf(hi, df) > q:
        lo, hi = hi, hi * 2.0
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if student_t_sf(mid, df) > q:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def student_t_ppf(p: float, df: float) -> float:
    """Quantile of Student's t (inverse of :func:`student_t_cdf`)."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie strictly between 0 and 1")
    if p < 0.5:
        return -student_t_isf(p, df)
    return student_t_isf(1.0 - p, df)


@dataclass(frozen=True)
class TTestOutcome:
    n: int
    mean: float
    std: float
    t_statistic: float
    degrees_of_freedom: int
    p_two_sided: float
    degenerate: bool = False


def _mean_std(scores: Sequence[float]) -> tuple[float, float]:
    n = len(scores)
    mean = math.fsum(scores) / n
    var = math.fsum((s - mean) ** 2 for s in scores) / (n - 1)
    return mean, math.sqrt(var)


def one_sample_t_test(scores: Sequence[float], mu0: float = 0.5) -> TTestOutcome:
    """Two-sided one-sample t-test of ``mean(scores) == mu0``.

    Zero variance is reported, not rejected: ``t`` is 0 with ``p = 1`` when
    the mean equals ``mu0``, otherwise signed infinity with ``p = 0``; both
    cases set ``degenerate``.
    """
    scores = [float(s) for s in scores]
    n = len(scores)
    if n < 2:
        raise TooFewSamples(f"t-test needs at least 2 scores, got {n}")
    mean, std = _mean_std(scores)
    df = n - 1
    if std == 0.0:
        if mean == mu0:
            return TTestOutcome(n, mean, std, 0.0, df, 1.0, degenerate=True)
        t = math.copysign(math.inf, mean - mu0)
        return TTestOutcome(n, mean, std, t, df, 0.0, degenerate=True)
    t = (mean - mu0) / (std / math.sqrt(n))
    p = 2.0 * student_t_cdf(-abs(t), df)
    return TTestOutcome(n, mean, std, t, df, min(1.0, p))


def bonferroni(p_raw: float, m: int) -> float:
    if m < 1:
        raise ValueError("m must be at least 1")
    if not 0.0 <= p_raw <= 1.0:
        raise ValueError("p_raw must lie in [0, 1]")
    return min(1.0, p_raw * m)


def corrected_ci(scores: Sequence[float], alpha: float = 0.05, m: int = 1) -> tuple[float, float]:
    """Bonferroni-corrected two-sided t interval for the mean of ``scores``."""
    scores = [float(s) for s in scores]
    n = len(scores)
    if n < 2:
        raise TooFewSamples(f"confidence interval needs at least 2 scores, got {n}")
    if m < 1:
        raise ValueError("m must be at least 1")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    mean, std = _mean_std(scores)
    if std == 0.0:
        raise ZeroVariance("all scores are identical")
    q = student_t_isf(alpha / (2.0 * m), n - 1)
    half = q * std / math.sqrt(n)
    return mean - half, mean + half
