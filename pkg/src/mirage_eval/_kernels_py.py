"""Reference implementations of the compiled kernels in numpy."""

import numpy as np


def fill_polygon(poly, width, height):
    """Even-odd scanline fill sampled at pixel centers (j + 0.5, i + 0.5).

    Edge k runs from vertex k to vertex k+1; a scanline at height y crosses it
    when exactly one endpoint lies strictly below y (half-open rule), at
    ``xi + (y - yi) * (xj - xi) / (yj - yi)``.
    """
    out = np.zeros((height, width), dtype=np.uint8)
    if len(poly) == 0:
        return out
    xi, yi = poly[:, 0], poly[:, 1]
    xj, yj = np.roll(xi, -1), np.roll(yi, -1)
    ys = np.arange(height) + 0.5
    crosses = (yi[None, :] > ys[:, None]) != (yj[None, :] > ys[:, None])
    for i in np.flatnonzero(crosses.any(axis=1)):
        e = crosses[i]
        y = ys[i]
        xs = np.sort(xi[e] + (y - yi[e]) * (xj[e] - xi[e]) / (yj[e] - yi[e]))
        starts = np.clip(np.ceil(xs[0::2] - 0.5), 0, width).astype(np.intp)
        stops = np.clip(np.ceil(xs[1::2] - 0.5), 0, width).astype(np.intp)
        for a, b in zip(starts, stops):
            out[i, a:b] = 1
    return out


def masked_box_mean(values, mask, radius):
    """Mean over the (2r+1)^2 window restricted to ``mask``; NaN off-mask."""
    h, w = values.shape
    m = mask.astype(bool)
    vals = np.pad(np.where(m, values, 0.0), radius)
    inside = np.pad(m, radius)
    acc = np.zeros((h, w))
    cnt = np.zeros((h, w), dtype=np.intp)
    # dy-major, dx-minor accumulation order matches the compiled loop
    for dy in range(2 * radius + 1):
        for dx in range(2 * radius + 1):
            acc += vals[dy:dy + h, dx:dx + w]
            cnt += inside[dy:dy + h, dx:dx + w]
    out = np.full((h, w), np.nan)
    out[m] = acc[m] / cnt[m]
    return out
