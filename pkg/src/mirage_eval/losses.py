"""Self-distillation loss terms computed offline from teacher and student depth.

Two families of terms are evaluated per view ("branch"):

* re-editing terms inside the ROI: mean Laplacian magnitude (flatness) and a
  gated mixture of residuals against planes fitted to the teacher on a ring
  just outside the ROI, plus a "null" expert that routes to the teacher;
* preservation terms outside it: teacher agreement on the background, on a
  low-gradient seam, on the high-gradient part of the ring and on a guard band.

Both fields are z-normalized with the teacher's background mean and standard
deviation. A sample's loss is ``L_crop + lambda_F * L_full``.
"""

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import kernels
from .errors import (
    AllSectorsDegenerate,
    DegenerateBackground,
    EmptyMask,
    RingEmpty,
    SchemaError,
)
from .geometry import MaskRaster, dilate, pixel_centers, rasterize_roi
from .metrics import laplacian_magnitude
from .stats import quantile_linear

PAPER_ALPHAS = (1.0, 0.4, 1.0, 0.5, 0.3, 0.8, 0.3)
W_FLOOR = 1e-12


@dataclass(frozen=True)
class LossConfig:
    alpha1: float = PAPER_ALPHAS[0]
    alpha2: float = PAPER_ALPHAS[1]
    alpha3: float = PAPER_ALPHAS[2]
    alpha4: float = PAPER_ALPHAS[3]
    alpha5: float = PAPER_ALPHAS[4]
    alpha6: float = PAPER_ALPHAS[5]
    alpha7: float = PAPER_ALPHAS[6]
    lambda_F: float = 0.5
    K: int = 3
    temperature: float = 0.1
    smoothing: float = 0.1
    beta_ce: float = 1.0
    beta_H: float = 0.01
    beta_anchor: float = 0.1
    ring_width: int = 8
    guard_width: int = 4
    smooth_radius: int = 5
    # exclude the edge subset r_e from the background mask as well
    strict_background: bool = False

    def __post_init__(self):
        for k in ("alpha1", "alpha2", "alpha3", "alpha4", "alpha5", "alpha6", "alpha7",
                  "lambda_F", "beta_ce", "beta_H", "beta_anchor"):
            if not getattr(self, k) >= 0:
                raise SchemaError(f"config.{k}", "must be >= 0")
        if self.K < 1:
            raise SchemaError("config.K", "must be >= 1")
        if not self.temperature > 0:
            raise SchemaError("config.temperature", "must be > 0")
        if not 0 <= self.smoothing < 1:
            raise SchemaError("config.smoothing", "must lie in [0, 1)")
        for k in ("ring_width", "guard_width"):
            if getattr(self, k) < 1:
                raise SchemaError(f"config.{k}", "must be >= 1")
        if self.smooth_radius < 0:
            raise SchemaError("config.smooth_radius", "must be >= 0")

    @property
    def nkp_alphas(self):
        return (self.alpha3, self.alpha4, self.alpha5, self.alpha6, self.alpha7)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict):
            raise SchemaError("config", "expected an object")
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for k, v in doc.items():
            if k not in known:
                raise SchemaError(f"config.{k}", "unknown loss parameter")
            default = getattr(cls, k)
            if isinstance(default, bool):
                if not isinstance(v, bool):
                    raise SchemaError(f"config.{k}", f"expected a boolean, got {v!r}")
            elif isinstance(default, int):
                if isinstance(v, bool) or not isinstance(v, int):
                    raise SchemaError(f"config.{k}", f"expected an integer, got {v!r}")
            elif isinstance(v, bool) or not isinstance(v, (int, float)):
                raise SchemaError(f"config.{k}", f"expected a number, got {v!r}")
            kwargs[k] = v
        return cls(**kwargs)


# --------------------------------------------------------------------- masks


@dataclass(frozen=True, eq=False)
class RingMasks:
    base_ring: MaskRaster
    r_f: MaskRaster
    r_e: MaskRaster
    r_g: MaskRaster
    m_bg: MaskRaster
    m_bg_strict: MaskRaster


def build_ring_masks(roi, lap_teacher, ring_width=8, guard_width=4):
    """Seam, edge subset, guard band and background around an ROI.

    ``lap_teacher`` ranks ring pixels: the top decile of its magnitude within
    the ring (ties kept) is the edge subset r_e, the rest is the seam r_f.
    The background follows ``(1-m)(1-r_f)(1-r_g)``; ``m_bg_strict`` also
    removes r_e.
    """
    if ring_width < 1 or guard_width < 1:
        raise ValueError("ring and guard widths must be >= 1")
    m = np.asarray(getattr(roi, "bits", roi), dtype=bool)
    if not m.any():
        raise EmptyMask("ROI is empty")
    inner = dilate(m, ring_width).bits
    base = inner & ~m
    if not base.any():
        raise RingEmpty("ROI leaves no room for a ring inside the frame")
    lap = lap_teacher.magnitude if hasattr(lap_teacher, "magnitude") else np.asarray(lap_teacher)
    ranked = base & np.isfinite(lap)
    r_e = np.zeros_like(base)
    if ranked.any():
        thr = quantile_linear(lap[ranked], 90)
        r_e = ranked & (np.nan_to_num(lap, nan=-np.inf) >= thr)
    r_f = base & ~r_e
    r_g = dilate(m, ring_width + guard_width).bits & ~inner
    m_bg = ~m & ~r_f & ~r_g
    return RingMasks(MaskRaster(base), MaskRaster(r_f), MaskRaster(r_e), MaskRaster(r_g),
                     MaskRaster(m_bg), MaskRaster(m_bg & ~r_e))


# --------------------------------------------------------------- normalization


@dataclass(frozen=True, eq=False)
class ZNormalized:
    z: np.ndarray  # NaN at invalid pixels
    mu_B: float
    sigma_B: float

    @property
    def shape(self):
        return self.z.shape


def background_stats(depth, m_bg):
    """Mean and population standard deviation over the background (two-pass)."""
    sel = np.asarray(getattr(m_bg, "bits", m_bg), dtype=bool) & depth.valid
    n = int(sel.sum())
    if n < 2:
        raise DegenerateBackground(f"need at least 2 background pixels, got {n}")
    v = depth.values[sel].astype(np.float64)
    mu = float(v.mean())
    sigma = math.sqrt(float(np.mean((v - mu) ** 2)))
    if sigma < 1e-8:
        raise DegenerateBackground(f"background standard deviation {sigma:.3g} is below 1e-8")
    return mu, sigma


def z_normalize(depth, m_bg=None, reference=None):
    """``z = (d - mu_B) / sigma_B``.

    Statistics come from ``reference`` (another ZNormalized, normally the
    teacher's) when given, else from ``depth`` over ``m_bg``.
    """
    if reference is not None:
        mu, sigma = reference.mu_B, reference.sigma_B
    else:
        mu, sigma = background_stats(depth, m_bg)
    return ZNormalized((depth.as_float64() - mu) / sigma, mu, sigma)


def _zvalues(x):
    return x.z if isinstance(x, ZNormalized) else np.asarray(x, dtype=np.float64)


def ring_local_smooth(z_T, r_f, radius=5):
    """Box mean over the (2r+1)² window restricted to r_f; NaN off r_f."""
    m = np.asarray(getattr(r_f, "bits", r_f), dtype=bool)
    z = _zvalues(z_T)
    m = m & np.isfinite(z)
    return kernels.masked_box_mean(np.where(m, z, 0.0), m, radius)


# --------------------------------------------------------------- plane mixture


@dataclass(frozen=True)
class PlaneMixture:
    planes: tuple  # (a, b, c) per expert, z = a*x + b*y + c at pixel centers
    sigmas: tuple
    ring_pixels_per_plane: tuple
    sectors: tuple  # original sector indices merged into each expert
    centroid: tuple

    def evaluate(self, k, xs, ys):
        a, b, c = self.planes[k]
        return a * xs + b * ys + c


def _fit_plane(x, y, v):
    design = np.column_stack([x, y, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(design, v, rcond=None)
    res = design @ coef - v
    return tuple(float(c) for c in coef), math.sqrt(float(np.mean(res * res)))


def _well_posed(x, y):
    if x.size < 3:
        return False
    design = np.column_stack([x - x.mean(), y - y.mean()])
    return np.linalg.matrix_rank(design) == 2


def fit_plane_mixture(z_T, roi, base_ring, K=3):
    """Least-squares planes on K angular sectors of the ring about the ROI centroid.

    Sector k covers atan2 angles ``[-pi + 2*pi*k/K, -pi + 2*pi*(k+1)/K)``. A
    sector without 3 non-collinear pixels is merged into the next one in
    increasing angle (clockwise on screen, since y points down).
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    z = _zvalues(z_T)
    m = np.asarray(getattr(roi, "bits", roi), dtype=bool)
    ring = np.asarray(getattr(base_ring, "bits", base_ring), dtype=bool) & np.isfinite(z)
    if not ring.any():
        raise RingEmpty("ring has no valid pixel")
    xs, ys = pixel_centers(*z.shape)
    cx, cy = float(xs[m].mean()), float(ys[m].mean())
    rx, ry, rv = xs[ring], ys[ring], z[ring]
    theta = np.arctan2(ry - cy, rx - cx)
    sector = np.minimum(((theta + math.pi) / (2 * math.pi) * K).astype(np.intp), K - 1)

    groups = [[k] for k in range(K)]
    members = [sector == k for k in range(K)]
    while True:
        bad = [g for g, sel in enumerate(members) if not _well_posed(rx[sel], ry[sel])]
        if not bad:
            break
        if len(groups) == 1:
            raise AllSectorsDegenerate("no ring sector has 3 non-collinear pixels")
        g = bad[0]
        nxt = (g + 1) % len(groups)
        members[nxt] = members[nxt] | members[g]
        groups[nxt] = groups[g] + groups[nxt] if nxt > g else groups[nxt] + groups[g]
        del members[g], groups[g]

    planes, sigmas, counts = [], [], []
    for sel in members:
        coef, sigma = _fit_plane(rx[sel], ry[sel], rv[sel])
        planes.append(coef)
        sigmas.append(sigma)
        counts.append(int(sel.sum()))
    return PlaneMixture(tuple(planes), tuple(sigmas), tuple(counts), tuple(tuple(g) for g in groups),
                        (cx, cy))


def mixture_residuals(z, z_T, roi, mix):
    """``[l_1, ..., l_K, l_null]``: mean |z - plane_k| and mean |z - z_T| over the ROI."""
    zz, zt = _zvalues(z), _zvalues(z_T)
    m = np.asarray(getattr(roi, "bits", roi), dtype=bool) & np.isfinite(zz)
    if not m.any():
        raise EmptyMask("ROI has no valid pixel")
    xs, ys = pixel_centers(*zz.shape)
    ell = [float(np.mean(np.abs(zz[m] - mix.evaluate(k, xs[m], ys[m])))) for k in range(len(mix.planes))]
    ell.append(float(np.mean(np.abs(zz[m] - zt[m]))))
    return ell


# --------------------------------------------------------------------- gating


@dataclass(frozen=True)
class GatingBundle:
    w: tuple
    q: tuple
    ce: float
    entropy: float
    anchor: float
    null_masked: bool

    def to_dict(self):
        return asdict(self)


def softmax(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - x.max())
    return e / e.sum()


def gating_targets(sigmas, ell, positive, temperature=0.1, smoothing=0.1, logits=None):
    """Soft targets q, mixture weights w and the gating regularizer parts.

    ``sigmas`` are the plane residual scales (a PlaneMixture is accepted too);
    ``ell`` lists the K plane residuals followed by the null residual.
    """
    if not temperature > 0:
        raise ValueError("temperature must be > 0")
    if not 0 <= smoothing < 1:
        raise ValueError("smoothing must lie in [0, 1)")
    sig = np.asarray(getattr(sigmas, "sigmas", sigmas), dtype=np.float64)
    K = sig.size
    ell = np.asarray(ell, dtype=np.float64)
    if ell.size != K + 1:
        raise ValueError(f"expected {K + 1} residuals (K planes + null), got {ell.size}")
    if positive:
        q = np.append(softmax(-sig / temperature), 0.0)
    else:
        q = np.append(np.full(K, smoothing / K), 1.0 - smoothing)
    if logits is not None:
        lg = np.asarray(logits, dtype=np.float64)
        if lg.size != K + 1:
            raise ValueError(f"expected {K + 1} logits, got {lg.size}")
    else:
        lg = -ell / temperature
    w = np.append(softmax(lg[:K]), 0.0) if positive else softmax(lg)
    ce = -float(np.sum(q * np.log(np.maximum(w, W_FLOOR))))
    nz = w > 0
    entropy = -float(np.sum(w[nz] * np.log(w[nz])))
    return GatingBundle(tuple(float(v) for v in w), tuple(float(v) for v in q), ce, entropy,
                        float(ell[:K].min()), bool(positive))


# ----------------------------------------------------------------- loss terms


def _masked_mean(values, mask):
    m = np.asarray(getattr(mask, "bits", mask), dtype=bool) & np.isfinite(values)
    if not m.any():
        return 0.0, False
    return float(np.mean(values[m])), True


def hkr_loss(z, roi, gate, ell, alpha1=PAPER_ALPHAS[0], alpha2=PAPER_ALPHAS[1]):
    """(hkr_flat, hkr_mixture, hkr) with hkr = alpha1*flat + alpha2*mixture."""
    if alpha1 < 0 or alpha2 < 0:
        raise ValueError("weights must be >= 0")
    lap = laplacian_magnitude(_zvalues(z)).magnitude
    flat, _ = _masked_mean(lap, roi)
    mixture = float(np.dot(gate.w, ell)) if gate is not None else 0.0
    return flat, mixture, alpha1 * flat + alpha2 * mixture


@dataclass(frozen=True)
class NkpTerms:
    t3: float
    t4: float
    t5: float
    t6: float
    t7: float
    nkp: float
    empty: tuple = ()  # names of terms whose mask was empty


def nkp_loss(z, z_T, rings, z_smooth, alphas=PAPER_ALPHAS[2:], strict=False):
    if any(a < 0 for a in alphas):
        raise ValueError("weights must be >= 0")
    zz, zt = _zvalues(z), _zvalues(z_T)
    dlap = np.abs(laplacian_magnitude(zz).magnitude - laplacian_magnitude(zt).magnitude)
    bg = rings.m_bg_strict if strict else rings.m_bg
    parts = [
        ("t3", np.abs(zz - zt), bg),
        ("t4", dlap, bg),
        ("t5", np.abs(zz - z_smooth), rings.r_f),
        ("t6", dlap, rings.r_e),
        ("t7", dlap, rings.r_g),
    ]
    vals, empty = [], []
    for name, grid, mask in parts:
        v, ok = _masked_mean(grid, mask)
        vals.append(v)
        if not ok:
            empty.append(name)
    nkp = float(sum(a * t for a, t in zip(alphas, vals)))
    return NkpTerms(*vals, nkp, tuple(empty))


# ------------------------------------------------------------------ branches


@dataclass(frozen=True)
class BranchLoss:
    hkr_flat: float = 0.0
    hkr_mixture: float = 0.0
    hkr: float = 0.0
    t3: float = 0.0
    t4: float = 0.0
    t5: float = 0.0
    t6: float = 0.0
    t7: float = 0.0
    nkp: float = 0.0
    ce: float = 0.0
    entropy: float = 0.0
    anchor: float = 0.0
    gating_reg: float = 0.0
    total: float = 0.0
    ell: tuple = ()
    sigmas: tuple = ()
    w: tuple = ()
    q: tuple = ()
    mu_B: float = 0.0
    sigma_B: float = 0.0
    flags: tuple = ()
    # candidate input features for a gating network: residuals, plane scales,
    # mean teacher curvature on seam / edge subset / guard band
    features: tuple = ()

    SCALARS = ("hkr_flat", "hkr_mixture", "hkr", "t3", "t4", "t5", "t6", "t7", "nkp",
               "ce", "entropy", "anchor", "gating_reg", "total")

    def terms(self):
        return {k: getattr(self, k) for k in self.SCALARS}

    def to_dict(self):
        d = self.terms()
        d.update(ell=list(self.ell), sigmas=list(self.sigmas), w=list(self.w), q=list(self.q),
                 mu_B=self.mu_B, sigma_B=self.sigma_B, flags=list(self.flags),
                 features=list(self.features))
        return d


def branch_loss(student, teacher, roi, positive=True, config=LossConfig(), logits=None):
    """Every loss term of one view. ``roi`` is a mask in the view's own frame (may be empty)."""
    c = config
    m = np.asarray(getattr(roi, "bits", roi), dtype=bool)
    flags = []
    lap_raw = laplacian_magnitude(teacher.as_float64())

    rings = None
    if m.any():
        try:
            rings = build_ring_masks(m, lap_raw, c.ring_width, c.guard_width)
        except RingEmpty:
            flags.append("ring_empty")
    else:
        flags.append("no_roi")
    if rings is None:
        empty = MaskRaster(np.zeros_like(m))
        rings = RingMasks(empty, empty, empty, empty, MaskRaster(~m), MaskRaster(~m))

    bg = rings.m_bg_strict if c.strict_background else rings.m_bg
    try:
        z_T = z_normalize(teacher, bg)
    except DegenerateBackground:
        flags.append("background_fallback_whole_view")
        z_T = z_normalize(teacher, np.ones_like(m))
    z = z_normalize(student, reference=z_T)

    z_smooth = (ring_local_smooth(z_T, rings.r_f, c.smooth_radius) if rings.r_f.any()
                else np.full(m.shape, np.nan))

    mix = gate = None
    ell = ()
    if rings.base_ring.any():
        try:
            mix = fit_plane_mixture(z_T, m, rings.base_ring, c.K)
        except (AllSectorsDegenerate, RingEmpty):
            flags.append("mixture_disabled")
    if mix is not None:
        ell = mixture_residuals(z, z_T, m, mix)
        gate = gating_targets(mix.sigmas, ell, positive, c.temperature, c.smoothing, logits)

    hkr_flat, hkr_mix, hkr = hkr_loss(z, m, gate, ell, c.alpha1, c.alpha2)
    nkp = nkp_loss(z, z_T, rings, z_smooth, c.nkp_alphas, c.strict_background)
    flags.extend(f"empty_mask_{t}" for t in nkp.empty)
    if gate is not None:
        ce, ent, anchor = gate.ce, gate.entropy, gate.anchor
    else:
        ce = ent = anchor = 0.0
    reg = c.beta_ce * ce + c.beta_H * ent + c.beta_anchor * anchor

    zt_lap = laplacian_magnitude(z_T.z).magnitude
    curv = tuple(_masked_mean(zt_lap, r)[0] for r in (rings.r_f, rings.r_e, rings.r_g))
    sigmas = mix.sigmas if mix is not None else ()
    return BranchLoss(
        hkr_flat=hkr_flat, hkr_mixture=hkr_mix, hkr=hkr,
        t3=nkp.t3, t4=nkp.t4, t5=nkp.t5, t6=nkp.t6, t7=nkp.t7, nkp=nkp.nkp,
        ce=ce, entropy=ent, anchor=anchor, gating_reg=reg, total=hkr + nkp.nkp + reg,
        ell=tuple(ell), sigmas=tuple(sigmas),
        w=gate.w if gate else (), q=gate.q if gate else (),
        mu_B=z_T.mu_B, sigma_B=z_T.sigma_B, flags=tuple(flags),
        features=tuple(ell) + tuple(sigmas) + curv,
    )


def mean_branch(branches):
    """Average the scalar terms of several crop branches; per-crop detail is dropped."""
    branches = list(branches)
    if not branches:
        return None
    if len(branches) == 1:
        return branches[0]
    avg = {k: math.fsum(getattr(b, k) for b in branches) / len(branches) for k in BranchLoss.SCALARS}
    flags = sorted({f for b in branches for f in b.flags})
    return BranchLoss(**avg, flags=tuple(flags))


@dataclass(frozen=True)
class LossBreakdown:
    crop: BranchLoss = None
    full: BranchLoss = None
    lambda_F: float = 0.5
    crop_details: tuple = field(default=())

    @property
    def crop_total(self):
        return self.crop.total if self.crop is not None else 0.0

    @property
    def full_total(self):
        return self.full.total if self.full is not None else 0.0

    @property
    def total(self):
        return self.crop_total + self.lambda_F * self.full_total

    def terms(self):
        """Flat name -> value map of every scalar term, branch-prefixed."""
        out = {"crop_total": self.crop_total, "full_total": self.full_total, "total": self.total}
        for name, br in (("crop", self.crop), ("full", self.full)):
            if br is not None:
                out.update({f"{name}.{k}": v for k, v in br.terms().items()})
                out.update({f"{name}.ell[{i}]": v for i, v in enumerate(br.ell)})
        return out

    def to_dict(self):
        return {
            "lambda_F": self.lambda_F,
            "crop": self.crop.to_dict() if self.crop else None,
            "full": self.full.to_dict() if self.full else None,
            "crop_details": [b.to_dict() for b in self.crop_details],
            "crop_total": self.crop_total,
            "full_total": self.full_total,
            "total": self.total,
        }


def total_loss(crop_branch, full_branch, lambda_F=0.5):
    """``L_crop + lambda_F * L_full``; a missing branch contributes 0.

    ``crop_branch`` may be a single BranchLoss or a sequence (one per crop),
    which is averaged.
    """
    if lambda_F < 0:
        raise ValueError("lambda_F must be >= 0")
    details = ()
    if crop_branch is not None and not isinstance(crop_branch, BranchLoss):
        details = tuple(crop_branch)
        crop_branch = mean_branch(details)
    return LossBreakdown(crop_branch, full_branch, float(lambda_F), details)


# ------------------------------------------------------------------- manifest


def roi_mask_in_view(sample, width, height, rect=None):
    """Union of the sample's ROIs rasterized in a view frame (full, or a crop's)."""
    bits = np.zeros((height, width), dtype=bool)
    if rect is None:
        sx, sy, ox, oy = width / sample.width, height / sample.height, 0.0, 0.0
    else:
        sx, sy, ox, oy = width / rect.width, height / rect.height, float(rect.x0), float(rect.y0)
    for shape in sample.rois:
        try:
            bits |= rasterize_roi(shape.transformed(sx, sy, ox, oy), width, height).bits
        except EmptyMask:
            continue
    return bits


def sample_loss(manifest, sample, student_role, teacher_role, config=LossConfig(), loader=None,
                logits=None):
    load = loader or manifest.load
    s_full, t_full = load(sample, student_role, "full"), load(sample, teacher_role, "full")
    if s_full.shape != t_full.shape:
        raise SchemaError(sample.id, "student and teacher full views differ in size")
    full = branch_loss(s_full, t_full, roi_mask_in_view(sample, t_full.width, t_full.height),
                       not sample.negative, config, logits)
    crops = []
    for rect in sample.crops:
        try:
            s_c, t_c = load(sample, student_role, rect.id), load(sample, teacher_role, rect.id)
        except KeyError:
            continue
        if s_c.shape != t_c.shape:
            raise SchemaError(sample.id, f"student and teacher crop {rect.id} differ in size")
        crops.append(branch_loss(s_c, t_c, roi_mask_in_view(sample, t_c.width, t_c.height, rect),
                                 not sample.negative, config, logits))
    return total_loss(crops or None, full, config.lambda_F)


def manifest_loss(manifest, student_role, teacher_role, config=LossConfig(), loader=None):
    """Per-sample breakdowns (sorted by id) and batch means of every scalar term."""
    per_sample = []
    for sample in sorted(manifest.samples, key=lambda s: s.id):
        try:
            per_sample.append((sample.id, sample_loss(manifest, sample, student_role, teacher_role,
                                                      config, loader)))
        except Exception as exc:  # noqa: BLE001 - tag and re-raise toolkit errors
            if hasattr(exc, "tag"):
                raise exc.tag((sample.id, "-", "-"))
            raise
    keys = sorted({k for _, b in per_sample for k in b.terms()})
    means = {}
    for k in keys:
        vals = [b.terms()[k] for _, b in per_sample if k in b.terms()]
        means[k] = math.fsum(vals) / len(vals)
    return per_sample, means
