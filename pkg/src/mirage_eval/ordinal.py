"""Sampled pairwise ordinal accuracy of a prediction against ground truth.

Pairs come from a counter-based generator (Philox 4x64): pair ``k`` is drawn
from counter block ``k`` alone, taking the first two of its four 64-bit words
modulo the number of jointly valid pixels. Any chunking of the pair range
therefore reproduces the same pairs.
"""

from dataclasses import dataclass

import numpy as np

from .depthmap import DepthMap
from .errors import NoValidPairs
from .geometry import resample_bilinear

DEFAULT_PAIRS = 50_000
DEFAULT_TAU = 0.01


@dataclass(frozen=True)
class OrdinalResult:
    accuracy: float
    pairs_retained: int
    pairs_sampled: int
    tau: float
    seed: int

    def to_dict(self):
        return {"accuracy": self.accuracy, "pairs_retained": self.pairs_retained,
                "pairs_sampled": self.pairs_sampled, "tau": self.tau, "seed": self.seed}


def pair_indices(n, start, count, seed):
    """Pixel index pairs ``start .. start+count-1`` over a population of ``n``."""
    bg = np.random.Philox(key=seed)
    if start:
        bg.advance(start)
    raw = bg.random_raw(4 * count).reshape(count, 4)
    return raw[:, 0] % np.uint64(n), raw[:, 1] % np.uint64(n)


def pairwise_accuracy(gt, pred, pairs=DEFAULT_PAIRS, tau=DEFAULT_TAU, seed=0, chunk=None):
    """Fraction of retained pairs whose prediction order matches ground truth.

    A pair is discarded when ``|g_i - g_j| <= tau * (g_max - g_min)``. Ties in
    the prediction count as wrong.
    """
    if not 0 <= tau < 1:
        raise ValueError(f"tau must lie in [0, 1), got {tau}")
    if pairs < 1:
        raise ValueError(f"pairs must be >= 1, got {pairs}")
    if gt.shape != pred.shape:
        gt = DepthMap(resample_bilinear(gt.as_float64(), pred.height, pred.width))
    joint = np.flatnonzero((gt.valid & pred.valid).ravel())
    if joint.size < 2:
        raise NoValidPairs(f"need at least 2 jointly valid pixels, got {joint.size}")
    g = gt.values.ravel()[joint].astype(np.float64)
    p = pred.values.ravel()[joint].astype(np.float64)
    band = tau * (g.max() - g.min())

    step = chunk or pairs
    retained = correct = 0
    for start in range(0, pairs, step):
        i, j = pair_indices(joint.size, start, min(step, pairs - start), seed)
        dg = g[i] - g[j]
        dp = p[i] - p[j]
        keep = np.abs(dg) > band
        retained += int(keep.sum())
        # retained pairs have dg != 0, so a tie dp == 0 never matches its sign
        correct += int((np.sign(dg[keep]) == np.sign(dp[keep])).sum())
    if retained == 0:
        raise NoValidPairs(f"all {pairs} sampled pairs fall inside the tie band")
    return OrdinalResult(correct / retained, retained, pairs, float(tau), int(seed))
