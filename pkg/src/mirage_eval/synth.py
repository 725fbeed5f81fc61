"""Deterministic synthetic benchmark trees with known answers.

Every scene is a tilted plane with dyadic slopes, so planar regions are exact
in float32 and their Laplacian is exactly zero. Presets plant structure on top:

* ``planar``: the plane alone
* ``bump``: a truncated Gaussian bump inside the ROI, in every view
* ``crop_only_bump``: the same bump in the crop views only (a "mirage")
* ``piecewise_planes``: two planes meeting along a horizontal crease through
  the ROI centroid
* ``noise``: the plane plus independent Gaussian noise per view

Crop views are rendered at the crop rectangle's resolution, so placing them
back in the full frame is the identity.
"""

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .depthio import dumps_canonical, atomic_write, write_pfm
from .depthmap import DepthMap
from .errors import InfeasibleCrop, MirageError, SpecError
from .geometry import CropRect, RoiShape, dilate, generate_crops, pixel_centers, rasterize_roi

PRESETS = ("planar", "bump", "crop_only_bump", "piecewise_planes", "noise")
EDITS = ("none", "flatten_roi", "flatten_everywhere", "offset_bg")
SLOPES = (-0.5, -0.25, -0.125, 0.125, 0.25, 0.5)
BASE_DEPTH = 128.0


@dataclass(frozen=True)
class FixtureSpec:
    preset: str = "planar"
    width: int = 64
    height: int = 64
    roi: tuple = None  # outer polygon; default is a centered roi_size rectangle
    roi_size: tuple = (24, 24)
    amplitude: float = 0.1  # bump height as a fraction of the plane's depth range
    sigma: float = None  # bump width in pixels; default keeps 3 sigma at 0.8 of the inradius
    noise_sigma: float = 0.0  # fraction of the plane's depth range
    seed: int = 0
    crops: int = 4
    min_diag_frac: float = 0.4

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise SpecError(f"unknown preset {self.preset!r}; choose from {', '.join(PRESETS)}")
        if self.width < 8 or self.height < 8:
            raise SpecError("frame must be at least 8x8")
        if self.amplitude < 0 or self.noise_sigma < 0:
            raise SpecError("amplitudes must be >= 0")
        if self.preset == "noise" and self.noise_sigma <= 0:
            raise SpecError("noise preset needs noise_sigma > 0")
        if self.seed < 0:
            raise SpecError("seed must be unsigned")
        if self.crops < 0:
            raise SpecError("crops must be >= 0")
        if self.preset == "piecewise_planes" and self.roi is not None:
            raise SpecError("piecewise_planes uses the default rectangular ROI")
        if self.roi is None:
            w, h = self.roi_size
            if not (4 <= w < self.width and 4 <= h < self.height):
                raise SpecError(f"roi_size {self.roi_size} does not fit the frame")
            if self.preset == "piecewise_planes" and h % 2:
                raise SpecError("piecewise_planes needs an even ROI height")
        try:
            shape = self.roi_shape()
        except MirageError as exc:
            raise SpecError(f"ROI: {exc}") from exc
        if self.preset in ("bump", "crop_only_bump"):
            limit = 0.8 * self.inradius() / 3.0
            if self.sigma is not None and not 0 < self.sigma <= limit + 1e-12:
                raise SpecError(f"bump sigma must lie in (0, {limit:.3f}] to keep 3 sigma inside the ROI")
        try:
            rasterize_roi(shape, self.width, self.height)
        except MirageError as exc:
            raise SpecError(f"ROI: {exc}") from exc

    def roi_shape(self):
        if self.roi is not None:
            return RoiShape(self.roi)
        w, h = self.roi_size
        x0, y0 = (self.width - w) // 2, (self.height - h) // 2
        return RoiShape([(x0, y0), (x0 + w, y0), (x0 + w, y0 + h), (x0, y0 + h)])

    def roi_center(self):
        mask = rasterize_roi(self.roi_shape(), self.width, self.height).bits
        xs, ys = pixel_centers(self.height, self.width)
        return float(xs[mask].mean()), float(ys[mask].mean())

    def inradius(self):
        """Distance from the ROI center to the nearest pixel outside the ROI."""
        mask = rasterize_roi(self.roi_shape(), self.width, self.height).bits
        xs, ys = pixel_centers(self.height, self.width)
        cx, cy = self.roi_center()
        outside = ~mask
        return float(np.min(np.hypot(xs[outside] - cx, ys[outside] - cy)))

    def bump_sigma(self):
        return self.sigma if self.sigma is not None else 0.8 * self.inradius() / 3.0

    def to_dict(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["roi"] = [list(p) for p in self.roi] if self.roi is not None else None
        d["roi_size"] = list(self.roi_size)
        return d


@dataclass(frozen=True, eq=False)
class Scene:
    full: DepthMap
    crops: dict
    roi: RoiShape
    rects: tuple
    fragment: dict
    # view fields before cutting: crop views are cut from crop_field
    full_field: np.ndarray = None
    crop_field: np.ndarray = None


def _sample_rng(spec, index):
    return np.random.default_rng(np.random.SeedSequence([spec.seed, index]))


def _plane(spec, rng):
    a, b = rng.choice(SLOPES, size=2)
    return float(a), float(b), BASE_DEPTH


def _plane_field(spec, coeffs):
    xs, ys = pixel_centers(spec.height, spec.width)
    a, b, c = coeffs
    return a * xs + b * ys + c


def _depth_range(spec, coeffs):
    a, b, _ = coeffs
    return abs(a) * spec.width + abs(b) * spec.height


def bump_field(spec, amplitude):
    """``A * max(0, g(r) - g(3 sigma)) / (1 - g(3 sigma))`` about the ROI center.

    Truncating at 3 sigma keeps everything outside that disc exactly zero.
    """
    xs, ys = pixel_centers(spec.height, spec.width)
    cx, cy = spec.roi_center()
    s = spec.bump_sigma()
    g = np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * s * s))
    g3 = math.exp(-4.5)
    return amplitude * np.maximum(0.0, g - g3) / (1.0 - g3)


def _crop_holds_core(rect, spec):
    """The crop interior contains the bump core (disc of radius sigma)."""
    cx, cy = spec.roi_center()
    r = spec.bump_sigma()
    return (rect.x0 + 1 <= cx - r and cx + r <= rect.x1 - 1
            and rect.y0 + 1 <= cy - r and cy + r <= rect.y1 - 1)


def _crops_for(spec, index):
    if spec.crops == 0:
        return ()
    shape = spec.roi_shape()
    need_core = spec.preset in ("bump", "crop_only_bump")
    rects, seen = [], set()
    for attempt in range(64):
        seed = int(np.random.SeedSequence([spec.seed, index, attempt]).generate_state(1)[0])
        try:
            cand = generate_crops(shape, spec.width, spec.height, spec.crops, spec.min_diag_frac, seed)
        except InfeasibleCrop:
            continue
        for r in cand:
            key = tuple(r.as_list())
            if key in seen or (need_core and not _crop_holds_core(r, spec)):
                continue
            seen.add(key)
            rects.append(CropRect(*key, id=f"c{len(rects)}", seed=seed))
            if len(rects) == spec.crops:
                return tuple(rects)
    if not rects:
        raise SpecError("could not place any crop satisfying the fixture constraints")
    return tuple(rects)


def _view_fields(spec, index):
    rng = _sample_rng(spec, index)
    coeffs = _plane(spec, rng)
    base = _plane_field(spec, coeffs)
    span = _depth_range(spec, coeffs)
    full = base
    crop = base
    if spec.preset == "bump":
        full = crop = base + span * bump_field(spec, spec.amplitude)
    elif spec.preset == "crop_only_bump":
        crop = base + span * bump_field(spec, spec.amplitude)
    elif spec.preset == "piecewise_planes":
        xs, ys = pixel_centers(spec.height, spec.width)
        _, cy = spec.roi_center()
        b2 = -coeffs[1] if coeffs[1] != 0 else 0.5
        full = crop = np.where(ys < cy, base, coeffs[0] * xs + coeffs[1] * cy + b2 * (ys - cy) + coeffs[2])
    if spec.preset == "noise" or spec.noise_sigma > 0:
        nrng = np.random.default_rng(np.random.SeedSequence([spec.seed, index, 1 << 20]))
        full = full + span * spec.noise_sigma * nrng.standard_normal(full.shape)
        crop = crop + span * spec.noise_sigma * nrng.standard_normal(crop.shape)
    return coeffs, full, crop


def make_scene(spec, index=0):
    """Full view, crop views, ROI, rectangles and a manifest fragment for one sample."""
    coeffs, full_field, crop_field = _view_fields(spec, index)
    rects = _crops_for(spec, index)
    # float32 storage is what lands on disk; keep the in-memory scene identical
    full = DepthMap(full_field.astype(np.float32))
    crops = {r.id: DepthMap(crop_field[r.y0:r.y1, r.x0:r.x1].astype(np.float32)) for r in rects}
    roi = spec.roi_shape()
    sid = f"s{index:04d}"
    fragment = {
        "id": sid, "width": spec.width, "height": spec.height,
        "rois": [roi.to_dict()], "crops": [r.to_dict() for r in rects],
        "depth": {}, "negative": False,
    }
    return Scene(full, crops, roi, rects, fragment, full_field, crop_field)


# ------------------------------------------------------------------- editing


def _ring_plane_fill(field, roi_mask, ring_width):
    """Replace ROI pixels with the plane fitted (raw units) to the surrounding ring."""
    ring = dilate(roi_mask, ring_width).bits & ~roi_mask
    xs, ys = pixel_centers(*field.shape)
    design = np.column_stack([xs[ring], ys[ring], np.ones(int(ring.sum()))])
    coef, *_ = np.linalg.lstsq(design, field[ring], rcond=None)
    out = field.copy()
    out[roi_mask] = coef[0] * xs[roi_mask] + coef[1] * ys[roi_mask] + coef[2]
    return out


def _global_plane(field):
    xs, ys = pixel_centers(*field.shape)
    design = np.column_stack([xs.ravel(), ys.ravel(), np.ones(field.size)])
    coef, *_ = np.linalg.lstsq(design, field.ravel(), rcond=None)
    return coef[0] * xs + coef[1] * ys + coef[2]


def edit_field(field, roi_mask, edit, delta=0.2, config=None):
    """Apply a student edit to one view field (raw depth units)."""
    from .losses import LossConfig, background_stats, build_ring_masks
    from .metrics import laplacian_magnitude

    config = config or LossConfig()
    if edit == "none":
        return field.copy()
    if edit == "flatten_roi":
        return _ring_plane_fill(field, roi_mask, config.ring_width)
    if edit == "flatten_everywhere":
        return _global_plane(field)
    if edit == "offset_bg":
        dm = DepthMap(field.astype(np.float32))
        rings = build_ring_masks(roi_mask, laplacian_magnitude(dm.as_float64()),
                                 config.ring_width, config.guard_width)
        bg = rings.m_bg_strict if config.strict_background else rings.m_bg
        _, sigma = background_stats(dm, bg)
        return np.where(roi_mask, field, field + delta * sigma)
    raise SpecError(f"unknown edit {edit!r}; choose from {', '.join(EDITS)}")


def make_student_teacher(spec, edit="none", index=0, delta=0.2, config=None):
    """(teacher, student) full-view depth maps for one sample."""
    if edit not in EDITS:
        raise SpecError(f"unknown edit {edit!r}; choose from {', '.join(EDITS)}")
    scene = make_scene(spec, index)
    mask = rasterize_roi(scene.roi, spec.width, spec.height).bits
    teacher = scene.full.values.astype(np.float64)
    # the student stays float64 so in-memory checks are not limited by float32 storage
    return scene.full, DepthMap(edit_field(teacher, mask, edit, delta, config))


# --------------------------------------------------------------------- trees


def write_tree(spec, out_dir, samples=20, edit="none", delta=0.2, negatives=0, config=None):
    """Write ``manifest.json`` plus PFM depth for roles "teacher" and "student".

    Returns the manifest path. Output bytes depend only on the arguments.
    """
    if samples < 0 or negatives < 0:
        raise SpecError("sample counts must be >= 0")
    if edit not in EDITS:
        raise SpecError(f"unknown edit {edit!r}; choose from {', '.join(EDITS)}")
    out = Path(out_dir)
    records = []
    for i in range(samples):
        scene = make_scene(spec, i)
        sid = scene.fragment["id"]
        mask = rasterize_roi(scene.roi, spec.width, spec.height).bits
        views = {}
        teacher_full = scene.full.values.astype(np.float64)
        teacher_crop = scene.crop_field.astype(np.float32).astype(np.float64)
        views["teacher"] = (teacher_full, teacher_crop)
        views["student"] = (edit_field(teacher_full, mask, edit, delta, config),
                            edit_field(teacher_crop, mask, edit, delta, config))
        depth = {}
        for role, (ffield, cfield) in views.items():
            rel_full = f"depth/{sid}/{role}_full.pfm"
            write_pfm(out / rel_full, ffield)
            crops = {}
            for r in scene.rects:
                rel = f"depth/{sid}/{role}_{r.id}.pfm"
                write_pfm(out / rel, cfield[r.y0:r.y1, r.x0:r.x1])
                crops[r.id] = rel
            depth[role] = {"full": rel_full, "crops": crops}
        rec = dict(scene.fragment)
        rec["depth"] = depth
        records.append(rec)
    for k in range(negatives):
        idx = samples + k
        coeffs = _plane(spec, _sample_rng(spec, idx))
        field = _plane_field(spec, coeffs)
        sid = f"s{idx:04d}"
        depth = {}
        for role in ("teacher", "student"):
            rel = f"depth/{sid}/{role}_full.pfm"
            write_pfm(out / rel, field)
            depth[role] = {"full": rel, "crops": {}}
        records.append({"id": sid, "width": spec.width, "height": spec.height, "rois": [],
                        "crops": [], "depth": depth, "negative": True})
    doc = {"version": 1, "samples": records}
    path = out / "manifest.json"
    atomic_write(path, dumps_canonical(doc))
    atomic_write(out / "fixture.json", dumps_canonical(
        {"spec": spec.to_dict(), "samples": samples, "negatives": negatives, "edit": edit, "delta": delta}))
    return path


def with_amplitude(spec, amplitude):
    return replace(spec, amplitude=amplitude)
