"""Laplacian planarity scoring of illusion ROIs in the (full, crop) response plane.

Each evaluation unit is one (sample, ROI, crop) triple. Both views are placed
in the full frame, percentile-normalized, passed through a 4-neighbour
Laplacian and summarized over the shared ROI pixels R by two decile filters:

* top decile: keep magnitudes at or above the 90th percentile; ``t`` is their sum
* trimmed mean: drop magnitudes below the 10th percentile; ``m`` is the mean

DCS measures distance from the origin of the (t_full, t_crop) plane and CCS
the distance of (m_full, m_crop) from the diagonal, each plus a per-pixel term.
"""

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .depthmap import DepthMap
from .errors import AllInvalid, EmptyEffectiveRoi, MirageError, SchemaError, TooSmall
from .geometry import MaskRaster, interior_mask, map_crop_to_full, rasterize_roi, resample_bilinear
from .stats import quantile_linear

SQRT2 = math.sqrt(2.0)
SCATTER_HEADER = "unit,t_full,t_crop,m_full,m_crop"


@dataclass(frozen=True, eq=False)
class NormalizedField:
    values: np.ndarray  # NaN at invalid pixels
    valid: np.ndarray
    lo: float
    hi: float
    degenerate: bool
    # source depth, kept so the Laplacian can be taken before the shift
    raw: np.ndarray = None

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class LaplacianField:
    magnitude: np.ndarray  # NaN where any stencil input is invalid
    valid: np.ndarray

    @property
    def height(self):
        return self.magnitude.shape[0]

    @property
    def width(self):
        return self.magnitude.shape[1]


@dataclass(frozen=True, eq=False)
class RoiAggregates:
    """Decile aggregates of one unit. Filtered fields are 0 outside their kept set."""

    t_full: float
    t_crop: float
    m_full: float
    m_crop: float
    region: MaskRaster
    kept_top_full: MaskRaster
    kept_top_crop: MaskRaster
    kept_trim_full: MaskRaster
    kept_trim_crop: MaskRaster
    lt_full: np.ndarray
    lt_crop: np.ndarray
    lm_full: np.ndarray
    lm_crop: np.ndarray


@dataclass(frozen=True)
class CompositeScores:
    d_cluster: float
    d_avg: float
    dcs: float
    D_cluster: float
    D_avg: float
    ccs: float

    KEYS = ("d_cluster", "d_avg", "dcs", "D_cluster", "D_avg", "ccs")

    def to_dict(self):
        return {k: getattr(self, k) for k in self.KEYS}

    @classmethod
    def mean(cls, scores):
        scores = list(scores)
        if not scores:
            raise ValueError("mean of no scores")
        return cls(**{k: math.fsum(getattr(s, k) for s in scores) / len(scores) for k in cls.KEYS})


@dataclass(frozen=True)
class EvalConfig:
    lower_percent: float = 1.0
    upper_percent: float = 99.0
    top_percent: float = 90.0
    trim_percent: float = 10.0
    # "roi": normalization statistics over the shared ROI pixels of the unit
    # "view": statistics over every valid pixel of each view
    norm_scope: str = "roi"
    border: int = 1

    def __post_init__(self):
        if self.norm_scope not in ("roi", "view"):
            raise ValueError(f"norm_scope must be 'roi' or 'view', got {self.norm_scope!r}")
        if not 0 <= self.lower_percent < self.upper_percent <= 100:
            raise ValueError("need 0 <= lower_percent < upper_percent <= 100")

    def to_dict(self):
        d = asdict(self)
        d["aggregation"] = "arithmetic mean over (sample, roi, crop) units"
        return d


# ---------------------------------------------------------------------- operators


def percentile_normalize(depth, lower=1.0, upper=99.0, stats_mask=None):
    """Map depth to ``(d - lo) / (hi - lo)`` with lo, hi the given percentiles.

    The percentiles are taken over valid pixels, optionally restricted to
    ``stats_mask``; the map itself is applied to every valid pixel and is not
    clipped. A range below ``1e-12 * max(1, |hi|)`` gives an all-zero field.
    """
    v = depth.as_float64()
    sel = depth.valid if stats_mask is None else depth.valid & np.asarray(stats_mask, dtype=bool)
    if not sel.any():
        raise AllInvalid("no valid pixel to normalize against")
    samples = v[sel]
    lo = quantile_linear(samples, lower)
    hi = quantile_linear(samples, upper)
    degenerate = not (hi - lo >= 1e-12 * max(1.0, abs(hi)))
    if degenerate:
        out = np.where(depth.valid, 0.0, np.nan)
    else:
        out = (v - lo) / (hi - lo)
    return NormalizedField(out, depth.valid.copy(), lo, hi, degenerate, v)


def laplacian_magnitude(field):
    """``|v(x+1,y) + v(x-1,y) + v(x,y+1) + v(x,y-1) - 4 v(x,y)|``.

    Frame borders replicate the edge value; a NaN anywhere in the stencil
    makes the output invalid.

    For a NormalizedField the stencil runs on the source depth and the result
    is divided by ``hi - lo``. The stencil weights sum to zero, so this is the
    same quantity without the rounding of the shift: exact ties in the source
    stay exact ties and a positive affine change of depth keeps the ordering
    of magnitudes bit for bit.
    """
    scale = None
    if isinstance(field, NormalizedField):
        if field.raw is None or field.degenerate:
            v = field.values
        else:
            v, scale = field.raw, field.hi - field.lo
    else:
        v = np.asarray(field, dtype=np.float64)
    if v.shape[0] < 3 or v.shape[1] < 3:
        raise TooSmall(f"Laplacian needs at least 3x3 pixels, got {v.shape[1]}x{v.shape[0]}")
    p = np.pad(v, 1, mode="edge")
    lap = (p[1:-1, 2:] + p[1:-1, :-2]) + (p[2:, 1:-1] + p[:-2, 1:-1]) - 4.0 * v
    mag = np.abs(lap)
    if scale is not None:
        mag /= scale
    return LaplacianField(mag, np.isfinite(mag))


def decile_filter(values, percent):
    """Keep entries at or above the percentile (ties kept). Returns (kept, filtered)."""
    thr = quantile_linear(values, percent)
    kept = values >= thr
    return kept, np.where(kept, values, 0.0)


def roi_aggregates(l_full, l_crop, roi, crop_valid, top_percent=90.0, trim_percent=10.0, border=1):
    """Top-decile sums and trimmed means of both views over the effective ROI.

    R is ``roi ∩ crop_valid`` further restricted to pixels where both
    Laplacians are defined and away from the ``border``-pixel frame margin.
    """
    h, w = l_full.magnitude.shape
    region = (np.asarray(getattr(roi, "bits", roi), dtype=bool)
              & np.asarray(getattr(crop_valid, "bits", crop_valid), dtype=bool)
              & l_full.valid & l_crop.valid & interior_mask(w, h, border).bits)
    if not region.any():
        raise EmptyEffectiveRoi("no ROI pixel is valid in both views")
    out = {}
    for view, lap in (("full", l_full), ("crop", l_crop)):
        vals = lap.magnitude[region]
        kt, ft = decile_filter(vals, top_percent)
        km, fm = decile_filter(vals, trim_percent)
        out[view] = (float(ft.sum()), float(fm.sum()) / int(km.sum()), kt, km, ft, fm)

    def grid(flat, dtype=np.float64):
        g = np.zeros((h, w), dtype=dtype)
        g[region] = flat
        return g

    f, c = out["full"], out["crop"]
    return RoiAggregates(
        t_full=f[0], t_crop=c[0], m_full=f[1], m_crop=c[1],
        region=MaskRaster(region),
        kept_top_full=MaskRaster(grid(f[2], bool)), kept_top_crop=MaskRaster(grid(c[2], bool)),
        kept_trim_full=MaskRaster(grid(f[3], bool)), kept_trim_crop=MaskRaster(grid(c[3], bool)),
        lt_full=grid(f[4]), lt_crop=grid(c[4]), lm_full=grid(f[5]), lm_crop=grid(c[5]),
    )


def composite_scores(agg):
    r = agg.region.bits
    d_cluster = math.hypot(agg.t_full, agg.t_crop)
    d_avg = float(np.mean(np.hypot(agg.lt_full[r], agg.lt_crop[r])))
    D_cluster = abs(agg.m_full - agg.m_crop) / SQRT2
    D_avg = float(np.mean(np.abs(agg.lm_full[r] - agg.lm_crop[r]))) / SQRT2
    return CompositeScores(d_cluster, d_avg, d_cluster + d_avg, D_cluster, D_avg, D_cluster + D_avg)


def score_unit(full, crop_in_full, roi_mask, config=EvalConfig()):
    """Scores for one unit; both depth maps already live in the full frame."""
    roi = roi_mask.bits if isinstance(roi_mask, MaskRaster) else np.asarray(roi_mask, dtype=bool)
    shared = roi & full.valid & crop_in_full.valid
    stats = shared if config.norm_scope == "roi" else None
    if stats is not None and not stats.any():
        raise EmptyEffectiveRoi("no ROI pixel is valid in both views")
    nf = percentile_normalize(full, config.lower_percent, config.upper_percent, stats)
    nc = percentile_normalize(crop_in_full, config.lower_percent, config.upper_percent, stats)
    agg = roi_aggregates(laplacian_magnitude(nf), laplacian_magnitude(nc), roi, crop_in_full.valid,
                         config.top_percent, config.trim_percent, config.border)
    scores = composite_scores(agg)
    assert scores.dcs == scores.d_cluster + scores.d_avg and scores.ccs == scores.D_cluster + scores.D_avg
    return agg, scores


# -------------------------------------------------------------------- benchmark


@dataclass(frozen=True)
class UnitScore:
    sample_id: str
    roi_index: int
    crop_id: str
    t_full: float
    t_crop: float
    m_full: float
    m_crop: float
    region_pixels: int
    scores: CompositeScores

    @property
    def unit_id(self):
        return f"{self.sample_id}/roi{self.roi_index}/{self.crop_id}"

    @property
    def key(self):
        return (self.sample_id, self.roi_index, self.crop_id)

    def to_dict(self):
        d = {"unit": self.unit_id, "sample": self.sample_id, "roi": self.roi_index,
             "crop": self.crop_id, "t_full": self.t_full, "t_crop": self.t_crop,
             "m_full": self.m_full, "m_crop": self.m_crop, "region_pixels": self.region_pixels}
        d.update(self.scores.to_dict())
        return d


@dataclass(frozen=True)
class BenchmarkResult:
    role: str
    config: EvalConfig
    units: tuple = ()
    skipped_negative: tuple = field(default=())

    @property
    def aggregate(self):
        return CompositeScores.mean(u.scores for u in self.units) if self.units else None

    def to_dict(self):
        agg = self.aggregate
        return {
            "role": self.role,
            "config": self.config.to_dict(),
            "unit_count": len(self.units),
            "aggregate": agg.to_dict() if agg else None,
            "units": [u.to_dict() for u in self.units],
            "skipped_negative": list(self.skipped_negative),
        }


def _fit_frame(depth, width, height):
    if depth.shape == (height, width):
        return depth
    return DepthMap(resample_bilinear(depth.as_float64(), height, width))


def benchmark_scores(manifest, role, config=EvalConfig(), loader=None):
    """Score every positive (sample, ROI, crop) unit of ``role``.

    ``loader(sample, role, view)`` returns a DepthMap; by default files are read
    through the manifest bindings. Errors are tagged with the unit.
    """
    load = loader or manifest.load
    units, skipped = [], []
    for sample in manifest.samples:
        if sample.negative:
            skipped.append(sample.id)
            continue
        if role not in sample.depth and loader is None:
            raise SchemaError(sample.id, f"no depth binding for role {role!r}")
        try:
            full = _fit_frame(load(sample, role, "full"), sample.width, sample.height)
        except MirageError as exc:
            raise exc.tag((sample.id, "-", "full"))
        crops = []
        for rect in sample.crops:
            try:
                crops.append((rect, map_crop_to_full(load(sample, role, rect.id), rect,
                                                     sample.width, sample.height)))
            except KeyError:
                raise SchemaError(sample.id, f"role {role!r} has no depth for crop {rect.id!r}") from None
            except MirageError as exc:
                raise exc.tag((sample.id, "-", rect.id))
        if not crops:
            raise SchemaError(sample.id, "positive sample has no crops to evaluate")
        for i, shape in enumerate(sample.rois):
            try:
                roi = rasterize_roi(shape, sample.width, sample.height)
            except MirageError as exc:
                raise exc.tag((sample.id, i, "-"))
            for rect, crop_full in crops:
                try:
                    agg, scores = score_unit(full, crop_full, roi, config)
                except MirageError as exc:
                    raise exc.tag((sample.id, i, rect.id))
                units.append(UnitScore(sample.id, i, rect.id, agg.t_full, agg.t_crop,
                                       agg.m_full, agg.m_crop, agg.region.count, scores))
    units.sort(key=lambda u: u.key)
    return BenchmarkResult(role, config, tuple(units), tuple(sorted(skipped)))


# ---------------------------------------------------------------------- scatter


def scatter_export(units):
    """Rows ``(unit id, t_full, t_crop, m_full, m_crop)`` in canonical unit order."""
    ordered = sorted(units, key=lambda u: u.key)
    return [(u.unit_id, u.t_full, u.t_crop, u.m_full, u.m_crop) for u in ordered]


def scatter_csv(rows):
    lines = [SCATTER_HEADER]
    for unit, *vals in rows:
        lines.append(",".join([unit] + [format(float(v), ".17g") for v in vals]))
    return "\n".join(lines) + "\n"


def scatter_svg(rows, size=360, margin=40):
    """Static (t_full, t_crop) scatter with the y = x diagonal."""
    pts = [(float(r[1]), float(r[2])) for r in rows]
    top = max([max(p) for p in pts] + [1e-12])
    span = size - 2 * margin

    def sx(v):
        return margin + span * v / top

    def sy(v):
        return size - margin - span * v / top

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
        f'<line x1="{sx(0):.2f}" y1="{sy(0):.2f}" x2="{sx(top):.2f}" y2="{sy(top):.2f}" '
        'stroke="#999" stroke-dasharray="4 3"/>',
        f'<line x1="{margin}" y1="{size - margin}" x2="{size - margin}" y2="{size - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{size - margin}" stroke="black"/>',
        f'<text x="{size / 2:.0f}" y="{size - 8}" text-anchor="middle" font-size="12">t_full</text>',
        f'<text x="12" y="{size / 2:.0f}" font-size="12" '
        f'transform="rotate(-90 12 {size / 2:.0f})" text-anchor="middle">t_crop</text>',
    ]
    for x, y in pts:
        parts.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="3" fill="#c0392b"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
