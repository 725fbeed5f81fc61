"""Independent brute-force references used across the tests."""

import math

import numpy as np


def point_in_polygon(x, y, poly):
    """Even-odd ray cast to +x, half-open in y."""
    inside = False
    n = len(poly)
    for k in range(n):
        x1, y1 = poly[k]
        x2, y2 = poly[(k + 1) % n]
        if (y1 > y) != (y2 > y):
            xc = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < xc:
                inside = not inside
    return inside


def raster_oracle(poly, width, height, holes=()):
    out = np.zeros((height, width), dtype=bool)
    for i in range(height):
        for j in range(width):
            x, y = j + 0.5, i + 0.5
            out[i, j] = point_in_polygon(x, y, poly) and not any(point_in_polygon(x, y, h) for h in holes)
    return out


def sorted_quantile(values, percent):
    """Type-7 percentile from a full sort."""
    s = sorted(float(v) for v in values)
    h = (len(s) - 1) * percent / 100.0
    k = math.floor(h)
    if k + 1 >= len(s):
        return s[-1]
    return s[k] + (s[k + 1] - s[k]) * (h - k)


def bilinear_at(grid, u, v):
    """Bilinear sample at continuous array coordinates (row v, col u), edge-clamped."""
    h, w = grid.shape
    v = min(max(v, 0.0), h - 1)
    u = min(max(u, 0.0), w - 1)
    r0, c0 = int(math.floor(v)), int(math.floor(u))
    r1, c1 = min(r0 + 1, h - 1), min(c0 + 1, w - 1)
    fy, fx = v - r0, u - c0
    top = grid[r0, c0] * (1 - fx) + grid[r0, c1] * fx
    bot = grid[r1, c0] * (1 - fx) + grid[r1, c1] * fx
    return top * (1 - fy) + bot * fy


def chessboard_dilate(mask, r):
    h, w = mask.shape
    out = np.zeros_like(mask)
    for i, j in zip(*np.nonzero(mask)):
        out[max(0, i - r):min(h, i + r + 1), max(0, j - r):min(w, j + r + 1)] = True
    return out


def window_mean(values, mask, r):
    h, w = values.shape
    out = np.full((h, w), np.nan)
    for i in range(h):
        for j in range(w):
            if not mask[i, j]:
                continue
            acc, n = 0.0, 0
            for a in range(max(0, i - r), min(h, i + r + 1)):
                for b in range(max(0, j - r), min(w, j + r + 1)):
                    if mask[a, b]:
                        acc += values[a, b]
                        n += 1
            out[i, j] = acc / n
    return out


def star_polygon(rng, cx, cy, rmin, rmax, n):
    ang = np.sort(rng.uniform(0, 2 * np.pi, n))
    rad = rng.uniform(rmin, rmax, n)
    return [(float(cx + r * np.cos(a)), float(cy + r * np.sin(a))) for a, r in zip(ang, rad)]
