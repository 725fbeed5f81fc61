"""Order statistics shared by the metrics, ring masks and heatmaps."""

import math

import numpy as np


def _rank(n, percent):
    """Lower order-statistic index and interpolation weight for a percentile.

    Integer percents use exact integer arithmetic so the rank never depends on
    how ``(n - 1) * p / 100`` happens to round.
    """
    if float(percent).is_integer():
        k, rem = divmod((n - 1) * int(percent), 100)
        return k, rem / 100.0
    h = (n - 1) * float(percent) / 100.0
    k = math.floor(h)
    return k, h - k


def quantile_linear(values, percent):
    """Percentile with linear interpolation between closest order statistics.

    This is the common "type 7" rule (numpy's default ``method="linear"``).
    ``values`` must be non-empty and finite.
    """
    if not 0 <= percent <= 100:
        raise ValueError(f"percent must lie in [0, 100], got {percent}")
    v = np.asarray(values, dtype=np.float64).ravel()
    n = v.size
    if n == 0:
        raise ValueError("quantile of an empty set")
    k, frac = _rank(n, percent)
    if frac == 0.0 or k + 1 >= n:
        return float(np.partition(v, k)[k])
    part = np.partition(v, (k, k + 1))
    lo, hi = float(part[k]), float(part[k + 1])
    t = lo + (hi - lo) * frac
    return min(max(t, lo), hi)


def top_fraction_mask(values, percent):
    """Boolean mask of entries at or above the given percentile (ties kept)."""
    v = np.asarray(values, dtype=np.float64)
    return v >= quantile_linear(v, percent)
