from dataclasses import dataclass

import numpy as np


def _readonly(a):
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DepthMap:
    """A row-major depth grid with an optional validity mask.

    Values keep their storage dtype (PFM loads stay float32 so round trips are
    bit-exact); consumers promote to float64. Non-finite entries are always
    invalid.
    """

    values: np.ndarray
    valid: np.ndarray = None

    def __post_init__(self):
        v = np.array(self.values, copy=True)
        if v.ndim != 2:
            raise ValueError(f"depth map must be 2-D, got shape {v.shape}")
        if not np.issubdtype(v.dtype, np.floating):
            v = v.astype(np.float64)
        ok = np.isfinite(v)
        if self.valid is not None:
            mask = np.asarray(self.valid, dtype=bool)
            if mask.shape != v.shape:
                raise ValueError(f"validity shape {mask.shape} != values shape {v.shape}")
            ok &= mask
        object.__setattr__(self, "values", _readonly(v))
        object.__setattr__(self, "valid", _readonly(ok))

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape

    def as_float64(self):
        """Values as float64 with invalid pixels set to NaN."""
        out = self.values.astype(np.float64)
        out[~self.valid] = np.nan
        return out

    def map(self, fn):
        """New depth map with ``fn`` applied to the values, same validity."""
        return DepthMap(fn(self.values.astype(np.float64)), self.valid)
