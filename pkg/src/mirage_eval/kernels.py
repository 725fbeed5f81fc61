"""Hot-loop dispatch: the compiled Cython core when it was built, else numpy.

``BACKEND`` names the active implementation. ``use_backend`` switches it for
benchmarks and equivalence tests; ``MIRAGE_EVAL_BACKEND=python`` in the
environment forces the fallback at import.
"""

import os

import numpy as np

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    _BACKENDS["cython"] = _compiled

BACKEND = "cython" if _compiled is not None else "python"
if os.environ.get("MIRAGE_EVAL_BACKEND", "").strip().lower() == "python":
    BACKEND = "python"


def available_backends():
    return sorted(_BACKENDS)


def use_backend(name):
    """Select the kernel implementation; returns the previous name."""
    global BACKEND
    if name not in _BACKENDS:
        raise ValueError(f"kernel backend {name!r} not available; have {available_backends()}")
    previous, BACKEND = BACKEND, name
    return previous


def fill_polygon(vertices, width, height):
    poly = np.ascontiguousarray(vertices, dtype=np.float64).reshape(-1, 2)
    out = _BACKENDS[BACKEND].fill_polygon(poly, int(width), int(height))
    return np.asarray(out, dtype=bool)


def masked_box_mean(values, mask, radius):
    vals = np.ascontiguousarray(values, dtype=np.float64)
    m = np.ascontiguousarray(mask, dtype=np.uint8)
    return np.asarray(_BACKENDS[BACKEND].masked_box_mean(vals, m, int(radius)))
