"""Background affine alignment of a student depth map to its teacher."""

import math
from dataclasses import dataclass

import numpy as np

from .depthmap import DepthMap
from .errors import DegenerateFit
from .metrics import percentile_normalize


@dataclass(frozen=True)
class AffineFit:
    """Least-squares ``teacher ≈ a * student + b`` over background pixels."""

    a: float
    b: float
    r2: float
    n: int

    @property
    def r2_percent(self):
        return 100.0 * self.r2

    def to_dict(self):
        return {"a": self.a, "b": self.b, "r2_percent": self.r2_percent, "n": self.n}


def _solve(s, t, sm):
    ds = s - sm
    sxx = float(np.dot(ds, ds))
    a = float(np.dot(ds, t - t.mean())) / sxx
    return a, float(t.mean() - a * sm)


def fit_affine_background(student, teacher, background):
    """Closed-form scale/shift fit with R² on the background.

    Solved on centered student values, then refined once on the residuals
    (iterative refinement): an exact affine relation comes out exact instead
    of a few ulps off.
    """
    bg = np.asarray(getattr(background, "bits", background), dtype=bool)
    sel = bg & student.valid & teacher.valid
    n = int(sel.sum())
    if n < 2:
        raise DegenerateFit(f"need at least 2 background pixels, got {n}")
    s = student.values[sel].astype(np.float64)
    t = teacher.values[sel].astype(np.float64)
    sm = float(s.mean())
    if float(np.dot(s - sm, s - sm)) <= 1e-300 or np.ptp(s) == 0:
        raise DegenerateFit("student depth is constant on the background")
    a, b = _solve(s, t, sm)
    best = float(np.dot(a * s + b - t, a * s + b - t))
    for _ in range(2):
        if best == 0.0:
            break
        da, db = _solve(s, t - (a * s + b), sm)
        a2, b2 = a + da, b + db
        res = a2 * s + b2 - t
        ss = float(np.dot(res, res))
        if ss >= best:
            break
        a, b, best = a2, b2, ss
    tm = float(t.mean())
    ss_tot = float(np.dot(t - tm, t - tm))
    if ss_tot == 0.0:
        r2 = 1.0 if best == 0.0 else -math.inf
    else:
        r2 = 1.0 - best / ss_tot
    return AffineFit(a, b, r2, n)


def error_heatmap(student, teacher, fit, lower=2.0, upper=98.0):
    """``|a*s + b - t|`` scaled to the per-image lower..upper percentile range, clamped to [0, 1].

    Invalid pixels are 0.
    """
    err = np.abs(fit.a * student.as_float64() + fit.b - teacher.as_float64())
    dm = DepthMap(err)
    if not dm.valid.any():
        return np.zeros(err.shape)
    norm = percentile_normalize(dm, lower, upper)
    out = np.clip(np.nan_to_num(norm.values, nan=0.0), 0.0, 1.0)
    return out
