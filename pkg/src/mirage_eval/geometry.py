"""ROI polygons, crop rectangles and the crop-to-full coordinate mapping.

Pixel (i, j) (row, column) has its center at continuous coordinates
``(x, y) = (j + 0.5, i + 0.5)``. Rasterization, resampling and plane fitting
all use this convention.
"""

import math
from itertools import chain
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import ndimage

from . import kernels
from .depthmap import DepthMap
from .errors import DegeneratePolygon, EmptyMask, InfeasibleCrop, InvalidShape

MAX_CROP_ATTEMPTS = 256


@dataclass(frozen=True, eq=False)
class MaskRaster:
    """Boolean pixel mask in a declared frame."""

    bits: np.ndarray

    def __post_init__(self):
        b = np.array(self.bits, dtype=bool, copy=True)
        if b.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {b.shape}")
        b.setflags(write=False)
        object.__setattr__(self, "bits", b)

    @classmethod
    def empty(cls, width, height):
        return cls(np.zeros((height, width), dtype=bool))

    @classmethod
    def full(cls, width, height):
        return cls(np.ones((height, width), dtype=bool))

    @property
    def width(self):
        return self.bits.shape[1]

    @property
    def height(self):
        return self.bits.shape[0]

    @cached_property
    def count(self):
        return int(np.count_nonzero(self.bits))

    def any(self):
        return self.count > 0

    def __and__(self, other):
        return MaskRaster(self.bits & _bits(other))

    def __or__(self, other):
        return MaskRaster(self.bits | _bits(other))

    def __sub__(self, other):
        return MaskRaster(self.bits & ~_bits(other))

    def __invert__(self):
        return MaskRaster(~self.bits)

    def __eq__(self, other):
        return isinstance(other, MaskRaster) and np.array_equal(self.bits, other.bits)

    __hash__ = None


def _bits(m):
    return m.bits if isinstance(m, MaskRaster) else np.asarray(m, dtype=bool)


def _as_polygon(points, what):
    try:
        poly = tuple((float(x), float(y)) for x, y in points)
    except (TypeError, ValueError) as exc:
        raise InvalidShape(f"{what}: vertices must be (x, y) pairs") from exc
    if not all(map(math.isfinite, chain.from_iterable(poly))):
        raise InvalidShape(f"{what}: non-finite vertex")
    if len(set(poly)) < 3:
        raise DegeneratePolygon(f"{what}: needs at least 3 distinct vertices, got {len(set(poly))}")
    return poly


@dataclass(frozen=True)
class RoiShape:
    """Outer polygon plus exclusion polygons, in full-image pixel coordinates."""

    outer: tuple
    exclusions: tuple = ()

    def __post_init__(self):
        outer = _as_polygon(self.outer, "outer")
        excl = tuple(_as_polygon(e, f"exclusions[{i}]") for i, e in enumerate(self.exclusions))
        x0, y0, x1, y1 = _bbox(outer)
        for i, e in enumerate(excl):
            for x, y in e:
                if not (x0 <= x <= x1 and y0 <= y <= y1):
                    raise InvalidShape(f"exclusions[{i}]: vertex ({x}, {y}) outside outer bounding box")
        object.__setattr__(self, "outer", outer)
        object.__setattr__(self, "exclusions", excl)

    def bbox(self):
        return _bbox(self.outer)

    def transformed(self, scale_x, scale_y, offset_x, offset_y):
        """Shape under ``x' = (x - offset_x) * scale_x`` (likewise for y)."""

        def f(poly):
            return [((x - offset_x) * scale_x, (y - offset_y) * scale_y) for x, y in poly]

        return RoiShape(f(self.outer), tuple(f(e) for e in self.exclusions))

    def to_dict(self):
        return {
            "polygon": [list(p) for p in self.outer],
            "exclusions": [[list(p) for p in e] for e in self.exclusions],
        }


def _bbox(poly):
    xs = [p[0] for p in poly]
    ys = [p[1] for p in poly]
    return min(xs), min(ys), max(xs), max(ys)


@dataclass(frozen=True)
class CropRect:
    """Half-open integer rectangle ``[x0, x1) x [y0, y1)`` in the full frame."""

    x0: int
    y0: int
    x1: int
    y1: int
    id: str = "c0"
    seed: int = 0

    @property
    def width(self):
        return self.x1 - self.x0

    @property
    def height(self):
        return self.y1 - self.y0

    @property
    def center(self):
        return (self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0

    def check(self, width, height):
        if not (0 <= self.x0 < self.x1 <= width and 0 <= self.y0 < self.y1 <= height):
            raise InvalidShape(
                f"crop {self.id}: rect {self.as_list()} does not fit a {width}x{height} frame"
            )
        return self

    def as_list(self):
        return [self.x0, self.y0, self.x1, self.y1]

    def to_dict(self):
        return {"id": self.id, "rect": self.as_list(), "seed": self.seed}


def rasterize_polygon(vertices, width, height):
    """Even-odd fill of one polygon, sampled at pixel centers."""
    return kernels.fill_polygon(vertices, width, height)


def rasterize_roi(shape, width, height):
    """Pixels whose centers are inside ``outer`` and inside no exclusion."""
    if width <= 0 or height <= 0:
        raise ValueError(f"frame must be positive, got {width}x{height}")
    bits = rasterize_polygon(shape.outer, width, height)
    for e in shape.exclusions:
        bits &= ~rasterize_polygon(e, width, height)
    mask = MaskRaster(bits)
    if not mask.any():
        raise EmptyMask(f"ROI covers no pixel center in a {width}x{height} frame")
    return mask


def shoelace_area(poly):
    p = np.asarray(poly, dtype=np.float64)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def polygon_area(shape):
    """Outer area minus exclusion areas, in squared pixels."""
    return shoelace_area(shape.outer) - sum(shoelace_area(e) for e in shape.exclusions)


def roi_bbox(shape, width, height):
    """ROI bounding box clipped to the frame, as floats ``(x0, y0, x1, y1)``."""
    x0, y0, x1, y1 = shape.bbox()
    return max(x0, 0.0), max(y0, 0.0), min(x1, float(width)), min(y1, float(height))


def crop_satisfies(rect, bbox, min_diag_frac):
    """The retained-diagonal and centering rules for one crop.

    ``crop ∩ bbox`` must have a diagonal of at least ``min_diag_frac`` times
    the bbox diagonal, and the crop center must lie inside the bbox.
    """
    bx0, by0, bx1, by1 = bbox
    ix = max(0.0, min(rect.x1, bx1) - max(rect.x0, bx0))
    iy = max(0.0, min(rect.y1, by1) - max(rect.y0, by0))
    cx, cy = rect.center
    centered = bx0 <= cx <= bx1 and by0 <= cy <= by1
    return centered and math.hypot(ix, iy) >= min_diag_frac * math.hypot(bx1 - bx0, by1 - by0)


def generate_crops(shape, width, height, count=4, min_diag_frac=0.4, seed=0):
    """Sample up to ``count`` distinct context-restricted crops around the ROI.

    Centers are uniform in the ROI bbox; each side is uniform between the
    smallest length that can satisfy the diagonal rule and
    ``min(frame side, 2 * bbox side)``. Rectangles are shifted to fit the frame
    and rejection-sampled against ``crop_satisfies``.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if not 0 < min_diag_frac <= 1:
        raise ValueError(f"min_diag_frac must lie in (0, 1], got {min_diag_frac}")
    bbox = roi_bbox(shape, width, height)
    bx0, by0, bx1, by1 = bbox
    bw, bh = bx1 - bx0, by1 - by0
    if bw <= 0 or bh <= 0:
        raise InfeasibleCrop("ROI bounding box does not overlap the frame")

    rng = np.random.default_rng(seed)
    rects = []
    for _ in range(count):
        for _attempt in range(MAX_CROP_ATTEMPTS):
            cx = rng.uniform(bx0, bx1)
            cy = rng.uniform(by0, by1)
            w = rng.uniform(min_diag_frac * bw, min(width, 2 * bw))
            h = rng.uniform(min_diag_frac * bh, min(height, 2 * bh))
            rw = min(width, max(1, math.ceil(w)))
            rh = min(height, max(1, math.ceil(h)))
            x0 = min(max(int(round(cx - rw / 2)), 0), width - rw)
            y0 = min(max(int(round(cy - rh / 2)), 0), height - rh)
            rect = CropRect(x0, y0, x0 + rw, y0 + rh, id=f"c{len(rects)}", seed=seed)
            if not crop_satisfies(rect, bbox, min_diag_frac):
                continue
            if any(r.as_list() == rect.as_list() for r in rects):
                continue
            rects.append(rect)
            break
    if not rects:
        raise InfeasibleCrop(
            f"no crop keeps {min_diag_frac:.0%} of the ROI diagonal after {MAX_CROP_ATTEMPTS} attempts"
        )
    return rects


def _axis_taps(n_in, n_out):
    u = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    u = np.clip(u, 0.0, n_in - 1)
    i0 = np.floor(u).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, u - i0


def _lerp(a, b, t):
    out = a + (b - a) * t
    return np.clip(out, np.minimum(a, b), np.maximum(a, b))


def resample_bilinear(values, out_height, out_width):
    """Separable bilinear resize with half-pixel centers and edge clamping.

    NaN inputs poison every output sample that gives them non-zero weight.
    """
    v = np.asarray(values, dtype=np.float64)
    bad = ~np.isfinite(v)
    v = np.where(bad, 0.0, v)
    r0, r1, fy = _axis_taps(v.shape[0], out_height)
    c0, c1, fx = _axis_taps(v.shape[1], out_width)
    rows = _lerp(v[r0, :], v[r1, :], fy[:, None])
    out = _lerp(rows[:, c0], rows[:, c1], fx[None, :])
    if bad.any():
        b = bad.astype(np.float64)
        brow = b[r0, :] * (1 - fy[:, None]) + b[r1, :] * fy[:, None]
        poisoned = (brow[:, c0] * (1 - fx) + brow[:, c1] * fx) > 0
        out[poisoned] = np.nan
    return out


def map_crop_to_full(crop_depth, rect, full_width, full_height):
    """Place a crop-view prediction at its rectangle in the full frame.

    Pixels outside the rectangle are invalid.
    """
    rect.check(full_width, full_height)
    patch = resample_bilinear(crop_depth.as_float64(), rect.height, rect.width)
    values = np.full((full_height, full_width), np.nan)
    values[rect.y0:rect.y1, rect.x0:rect.x1] = patch
    return DepthMap(values)


def dilate(mask, radius):
    """Chessboard (square structuring element) dilation by ``radius`` pixels."""
    bits = _bits(mask)
    if radius <= 0:
        return MaskRaster(bits)
    grown = ndimage.maximum_filter(bits.astype(np.uint8), size=2 * radius + 1,
                                   mode="constant", cval=0)
    return MaskRaster(grown.astype(bool))


def interior_mask(width, height, border=1):
    """Frame minus a ``border``-pixel margin."""
    bits = np.zeros((height, width), dtype=bool)
    if width > 2 * border and height > 2 * border:
        bits[border:height - border, border:width - border] = True
    return MaskRaster(bits)


def pixel_centers(height, width):
    """Continuous (x, y) coordinates of every pixel center, each (H, W)."""
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    return xs + 0.5, ys + 0.5
