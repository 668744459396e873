"""Trend testing and linear modeling of per-cycle efficiency series.

The linearity check works on the first difference of the series: if the
differenced series shows no monotonic trend under the Mann-Kendall test,
the original series is consistent with a straight line plus fluctuation,
and a least-squares fit of ``value = slope * t + intercept`` summarizes it.

Mann-Kendall here is the plain test with the standard tie-corrected
variance and no autocorrelation correction. Classification is three-way:
a trend is declared when the two-sided p-value is below the significance
level (default 0.05), absence of trend when it is above the no-trend
threshold (default 0.10), and the band in between is reported as
inconclusive rather than silently assigned to either side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

DEFAULT_SIGNIFICANCE = 0.05
DEFAULT_NO_TREND_THRESHOLD = 0.10


class TrendCall(str, Enum):
    TREND_PRESENT = "trend-present"
    NO_TREND = "no-trend"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class DiffSeries:
    """First difference of a series; one element shorter than the source."""

    values: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=float)
        arr = arr.copy() if arr.base is not None or arr.flags.writeable else arr
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    def __len__(self) -> int:
        return len(self.values)


def first_difference(values, source_id: str = "") -> DiffSeries:
    """values[i+1] - values[i] for consecutive elements."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or len(arr) < 2:
        raise ValueError("need a 1-d series of length >= 2")
    return DiffSeries(values=np.diff(arr), source_id=source_id)


@dataclass(frozen=True)
class MKResult:
    """Mann-Kendall test outcome.

    ``s_stat`` is the exact integer sum of pairwise signs, ``var_s`` its
    tie-corrected variance, ``z`` the continuity-corrected normal score and
    ``p_value`` the two-sided tail probability. ``tie_groups`` lists
    (value, multiplicity) for every value occurring more than once.
    """

    s_stat: int
    var_s: float
    z: float
    p_value: float
    n: int
    tie_groups: tuple[tuple[float, int], ...]
    classification: TrendCall


def normal_sf(z: float) -> float:
    """Upper tail of the standard normal, via the complementary error
    function (no table lookup; libm erfc is accurate to well below 1e-12)."""
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def _tie_groups_with_epsilon(x: np.ndarray, eps: float) -> tuple[tuple[float, int], ...]:
    """Cluster sorted values whose consecutive gaps are <= eps; each cluster
    of size > 1 is a tie group keyed by its first member."""
    xs = np.sort(x)
    groups = []
    start = 0
    for k in range(1, len(xs) + 1):
        if k == len(xs) or xs[k] - xs[k - 1] > eps:
            if k - start > 1:
                groups.append((float(xs[start]), k - start))
            start = k
    return tuple(groups)


def mk_test(
    values,
    significance: float = DEFAULT_SIGNIFICANCE,
    no_trend_threshold: float = DEFAULT_NO_TREND_THRESHOLD,
    tie_epsilon: float = 0.0,
) -> MKResult:
    """Mann-Kendall trend test over a real-valued series.

    S sums sgn(x_j - x_k) over all n(n-1)/2 ordered pairs k < j. By
    default ties are detected by exact floating-point equality (measured
    data quantized by the sensor produces exact ties). A positive
    ``tie_epsilon`` instead treats pair differences within the epsilon as
    ties, with tie groups formed by clustering sorted values whose
    consecutive gaps stay within it. The variance is

        VAR(S) = [n(n-1)(2n+5) - sum_k q_k(q_k-1)(2q_k+5)] / 18

    with q_k the size of the k-th tie group, and

        z = (S - 1)/sqrt(VAR)  if S > 0,  0 if S = 0,  (S + 1)/sqrt(VAR) if S < 0.

    A fully tied series has VAR(S) = 0 and is reported as no-trend with
    p = 1 by convention.
    """
    x = np.asarray(values, dtype=float)
    if x.ndim != 1 or len(x) < 3:
        raise ValueError("need a 1-d series of length >= 3")
    if not np.isfinite(x).all():
        raise ValueError("series contains non-finite values")
    if tie_epsilon < 0.0:
        raise ValueError("tie_epsilon must be >= 0")
    n = len(x)

    deltas = x[None, :] - x[:, None]
    if tie_epsilon > 0.0:
        signs = np.where(np.abs(deltas) <= tie_epsilon, 0.0, np.sign(deltas))
        tie_groups = _tie_groups_with_epsilon(x, tie_epsilon)
        counts = np.array([c for _, c in tie_groups], dtype=float)
    else:
        signs = np.sign(deltas)
        uniq, all_counts = np.unique(x, return_counts=True)
        tied = all_counts > 1
        tie_groups = tuple((float(v), int(c)) for v, c in zip(uniq[tied], all_counts[tied]))
        counts = all_counts
    s = int(np.triu(signs, k=1).sum())

    correction = int(np.sum(counts * (counts - 1) * (2 * counts + 5))) if len(counts) else 0
    var_s = (n * (n - 1) * (2 * n + 5) - correction) / 18.0

    if var_s == 0.0:
        return MKResult(
            s_stat=s, var_s=0.0, z=0.0, p_value=1.0, n=n,
            tie_groups=tie_groups, classification=TrendCall.NO_TREND,
        )

    if s > 0:
        z = (s - 1) / math.sqrt(var_s)
    elif s < 0:
        z = (s + 1) / math.sqrt(var_s)
    else:
        z = 0.0
    p = 2.0 * normal_sf(abs(z))
    p = min(p, 1.0)

    if p < significance:
        call = TrendCall.TREND_PRESENT
    elif p > no_trend_threshold:
        call = TrendCall.NO_TREND
    else:
        call = TrendCall.INCONCLUSIVE
    return MKResult(
        s_stat=s, var_s=var_s, z=z, p_value=p, n=n,
        tie_groups=tie_groups, classification=call,
    )


@dataclass(frozen=True)
class FitResult:
    """Least-squares line through (t, value) points.

    ``intercept`` is the modeled efficiency at the start of the test
    (t = 0); ``soe_range`` is (low, high) of the fitted line evaluated at
    the start and at the last cycle, i.e. the modeled span over the test.
    """

    slope: float
    intercept: float
    residuals: np.ndarray
    n: int
    soe_range: tuple[float, float]

    def __post_init__(self):
        arr = np.asarray(self.residuals, dtype=float)
        arr = arr.copy() if arr.base is not None or arr.flags.writeable else arr
        arr.flags.writeable = False
        object.__setattr__(self, "residuals", arr)

    def value_at(self, t: float) -> float:
        return self.slope * t + self.intercept


def ols_fit(t, values) -> FitResult:
    """Ordinary least squares of ``value = slope * t + intercept``.

    Closed-form normal equations on centered data. Residuals satisfy
    sum(r) = 0 and sum(t * r) = 0 up to rounding.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(values, dtype=float)
    if t.shape != y.shape or t.ndim != 1 or len(t) < 2:
        raise ValueError("need equal-length 1-d series with >= 2 points")
    if not (np.isfinite(t).all() and np.isfinite(y).all()):
        raise ValueError("series contains non-finite values")
    dt = t - t.mean()
    stt = float(np.dot(dt, dt))
    if stt == 0.0:
        raise ValueError("degenerate design")
    slope = float(np.dot(dt, y - y.mean())) / stt
    intercept = float(y.mean() - slope * t.mean())
    residuals = y - (slope * t + intercept)
    endpoints = (intercept, slope * float(t.max()) + intercept)
    return FitResult(
        slope=slope,
        intercept=intercept,
        residuals=residuals,
        n=len(t),
        soe_range=(min(endpoints), max(endpoints)),
    )


def verify_linearity(
    values,
    significance: float = DEFAULT_SIGNIFICANCE,
    no_trend_threshold: float = DEFAULT_NO_TREND_THRESHOLD,
    source_id: str = "",
) -> tuple[MKResult, bool]:
    """Test whether a series is consistent with a linear trend.

    Differences the series, runs the Mann-Kendall test on the differences,
    and returns (test result, verdict). The verdict is True exactly when
    the differenced series classifies as no-trend: a line's differences
    are level, so any remaining monotonic drift in them contradicts
    linearity.
    """
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or len(arr) < 4:
        raise ValueError("need a 1-d series of length >= 4")
    diff = first_difference(arr, source_id=source_id)
    result = mk_test(diff.values, significance, no_trend_threshold)
    return result, result.classification is TrendCall.NO_TREND
