"""Laplacian planarity metrics, knowledge-preservation checks and
self-distillation loss diagnostics for 3D-mirage hallucinations in
monocular depth estimation."""

__version__ = "0.1.0"

from .depthmap import DepthMap  # noqa: E402
from .kernels import BACKEND  # noqa: E402

__all__ = ["DepthMap", "BACKEND", "__version__"]
