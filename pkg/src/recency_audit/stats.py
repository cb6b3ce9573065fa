"""Student t-test built on a continued-fraction regularized incomplete beta."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

_TINY = 1e-300


class TooFewSamples(ValueError):
    pass


class ZeroVariance(ValueError):
    pass


def _betacf(a: float, b: float, x: float, rtol: float, max_iter: int) -> float:
    # modified Lentz evaluation of the incomplete-beta continued fraction
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > _TINY else _TINY)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < rtol:
            return h
    raise ArithmeticError(f"incomplete beta did not converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float, rtol: float = 1e-15, max_iter: int = 10_000) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    return _betainc_split(a, b, x, 1.0 - x, math.log(x), math.log1p(-x), rtol, max_iter)


def _betainc_split(a, b, x, y, log_x, log_y, rtol=1e-15, max_iter=10_000):
    # y = 1 - x is passed in so callers can supply it without cancellation
    front = math.exp(math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * log_x + b * log_y)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x, rtol, max_iter) / a
    return 1.0 - front * _betacf(b, a, y, rtol, max_iter) / b


def t_sf_two_sided(t: float, df: float) -> float:
    """P(|T| >= |t|) for Student's t with `df` degrees of freedom."""
    t2 = t * t
    if math.isinf(t2):
        return 0.0
    if t2 == 0.0:
        return 1.0
    # x = df/(df+t^2) rounds to 1 for tiny t, so 1-x is formed directly
    x, y = df / (df + t2), t2 / (df + t2)
    return _betainc_split(df / 2.0, 0.5, x, y, -math.log1p(t2 / df), math.log(y))


@dataclass(frozen=True)
class TTestResult:
    statistic: float
    pvalue: float
    df: int


def t_test_one_sample(values: Sequence[float], mu0: float = 0.0) -> TTestResult:
    """Two-sided one-sample t-test of mean(values) against mu0."""
    n = len(values)
    if n < 2:
        raise TooFewSamples(f"need at least 2 values, got {n}")
    mean = math.fsum(values) / n
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    if var == 0.0:
        raise ZeroVariance("sample variance is zero")
    t = (mean - mu0) / math.sqrt(var / n)
    return TTestResult(t, t_sf_two_sided(t, n - 1), n - 1)
