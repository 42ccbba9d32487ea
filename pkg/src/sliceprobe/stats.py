"""Bootstrap t-test on per-slice metric differences."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


class Direction(str, enum.Enum):
    LOWER = "lower"
    HIGHER = "higher"
    NONE = "none"


class WantedDirection(str, enum.Enum):
    LOWER = "lower"
    HIGHER = "higher"
    ANY = "any"


class StandardError(str, enum.Enum):
    """How the replicate spread is scaled into the t denominator.

    ``REPLICATE_SD``: the replicate standard deviation is itself the standard
    error of the metric difference (the usual bootstrap reading).
    ``MEAN``: treat replicates as iid observations and divide by sqrt(B_u).
    """

    REPLICATE_SD = "replicate_sd"
    MEAN = "mean"


class Untestable(ValueError):
    """Fewer than two usable replicates."""


DEGENERATE = math.inf

_EPS = 1e-16
_TINY = 1e-300


def _betacf(a: float, b: float, x: float) -> float:
    # modified Lentz evaluation of the incomplete beta continued fraction
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, 10_000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError(f"incomplete beta did not converge for a={a}, b={b}, x={x}")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    # the continued fraction converges fast only below the mean
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_statistic(deltas: Sequence[float], standard_error=StandardError.REPLICATE_SD) -> float:
    """t for H0: mean difference = 0.

    Returns ``DEGENERATE`` (inf) when the replicates have zero spread; the
    caller decides what that means via :func:`p_value`.
    """
    d = np.asarray(deltas, dtype=np.float64)
    n = d.size
    if n < 2:
        raise Untestable(f"need at least 2 usable replicates, got {n}")
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        return DEGENERATE
    se = sd / math.sqrt(n) if StandardError(standard_error) is StandardError.MEAN else sd
    return mean / se


def p_value(t: float, df: int, mean: Optional[float] = None) -> float:
    """Two-sided Student-t tail probability 2*(1 - F(|t|; df)).

    For a degenerate statistic, ``mean`` decides: p = 0 when the constant
    difference is nonzero, 1 when it is zero.
    """
    if df < 1:
        raise ValueError(f"df must be >= 1, got {df}")
    if t is DEGENERATE or math.isinf(t):
        if mean is not None and mean == 0.0:
            return 1.0
        return 0.0
    if t == 0.0:
        return 1.0
    p = betainc(df / 2.0, 0.5, df / (df + t * t))
    return min(1.0, max(0.0, p))


@dataclass
class SliceStat:
    predicate: tuple
    size: int
    point_delta: Optional[float]
    mean: Optional[float]
    sd: Optional[float]
    usable_replicates: int
    t: Optional[float]
    p_value: float
    direction: Direction
    significant: bool
    testable: bool = True

    @property
    def degenerate(self) -> bool:
        return self.t is not None and math.isinf(self.t)


def classify(
    predicate,
    size: int,
    point_delta: Optional[float],
    deltas: Sequence[float],
    alpha: float,
    wanted=WantedDirection.ANY,
    standard_error=StandardError.REPLICATE_SD,
) -> SliceStat:
    """Test one slice's replicate differences and flag significance."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    wanted = WantedDirection(wanted)
    d = np.asarray(deltas, dtype=np.float64)
    n = int(d.size)
    if n < 2:
        mean = float(d.mean()) if n else None
        return SliceStat(predicate, size, point_delta, mean, None, n, None, 1.0,
                         Direction.NONE, False, testable=False)
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    t = t_statistic(d, standard_error)
    p = p_value(t, n - 1, mean)
    if mean < 0:
        direction = Direction.LOWER
    elif mean > 0:
        direction = Direction.HIGHER
    else:
        direction = Direction.NONE
    wanted_ok = wanted is WantedDirection.ANY or direction.value == wanted.value
    return SliceStat(predicate, size, point_delta, mean, sd, n, t, p, direction,
                     bool(p < alpha and wanted_ok))
