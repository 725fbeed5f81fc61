import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mirage_eval.depthmap import DepthMap
from mirage_eval.errors import NoValidPairs
from mirage_eval.geometry import resample_bilinear
from mirage_eval.ordinal import pair_indices, pairwise_accuracy


def exhaustive_accuracy(gt, pred, tau):
    """All ordered pairs (i, j), i != j, with the same tie band."""
    g = gt.ravel().astype(np.float64)
    p = pred.ravel().astype(np.float64)
    band = tau * (g.max() - g.min())
    kept = correct = 0
    for i, j in itertools.permutations(range(g.size), 2):
        if abs(g[i] - g[j]) <= band:
            continue
        kept += 1
        correct += np.sign(g[i] - g[j]) == np.sign(p[i] - p[j])
    return correct / kept


def _field(seed, shape=(16, 16)):
    return np.random.default_rng(seed).normal(size=shape)


def test_perfect_and_inverted_orderings():
    g = _field(0)
    assert pairwise_accuracy(DepthMap(g), DepthMap(g), pairs=5000).accuracy == 1.0
    assert pairwise_accuracy(DepthMap(g), DepthMap(-g), pairs=5000).accuracy == 0.0


def test_constant_prediction_on_three_by_three():
    g = np.arange(9.0).reshape(3, 3)
    pred = np.full((3, 3), 2.0)
    assert exhaustive_accuracy(g, pred, 0.01) == 0.0
    res = pairwise_accuracy(DepthMap(g), DepthMap(pred), pairs=20000, tau=0.01)
    assert abs(res.accuracy - 0.0) <= 0.02


def test_three_by_three_noisy_prediction_matches_enumeration():
    g = np.arange(9.0).reshape(3, 3)
    pred = g + np.array([[0, 3, 0], [-2, 0, 0], [0, 0, -4.5]])
    exact = exhaustive_accuracy(g, pred, 0.01)
    res = pairwise_accuracy(DepthMap(g), DepthMap(pred), pairs=20000, tau=0.01, seed=11)
    assert abs(res.accuracy - exact) <= 0.02


@settings(max_examples=30)
@given(seed=st.integers(0, 2**32 - 1), f=st.sampled_from(["exp", "cube", "affine", "arctan"]))
def test_strictly_increasing_transforms_do_not_change_accuracy(seed, f):
    g = _field(seed, (10, 10))
    p = g + np.random.default_rng(seed + 1).normal(scale=0.5, size=g.shape)
    fn = {"exp": np.exp, "cube": lambda x: x**3, "affine": lambda x: 3 * x - 7, "arctan": np.arctan}[f]
    base = pairwise_accuracy(DepthMap(g), DepthMap(p), pairs=3000, seed=seed)
    moved = pairwise_accuracy(DepthMap(g), DepthMap(fn(p)), pairs=3000, seed=seed)
    assert base.accuracy == moved.accuracy


def test_determinism_and_chunking():
    g, p = _field(1), _field(2)
    a = pairwise_accuracy(DepthMap(g), DepthMap(p), pairs=12345, seed=99)
    b = pairwise_accuracy(DepthMap(g), DepthMap(p), pairs=12345, seed=99)
    c = pairwise_accuracy(DepthMap(g), DepthMap(p), pairs=12345, seed=99, chunk=1000)
    assert a == b == c
    d = pairwise_accuracy(DepthMap(g), DepthMap(p), pairs=12345, seed=100)
    assert d.accuracy != a.accuracy


def test_pair_streams_are_offset_independent():
    i0, j0 = pair_indices(50, 0, 100, 5)
    i1, j1 = pair_indices(50, 40, 60, 5)
    assert np.array_equal(i0[40:], i1) and np.array_equal(j0[40:], j1)


def test_sampled_estimate_matches_enumeration_on_32x32():
    rng = np.random.default_rng(8)
    g = rng.normal(size=(32, 32))
    p = g + rng.normal(scale=0.8, size=g.shape)
    # vectorized all-pairs count
    gf, pf = g.ravel(), p.ravel()
    dg = gf[:, None] - gf[None, :]
    dp = pf[:, None] - pf[None, :]
    keep = np.abs(dg) > 0.01 * (gf.max() - gf.min())
    np.fill_diagonal(keep, False)
    exact = (np.sign(dg[keep]) == np.sign(dp[keep])).mean()
    est = pairwise_accuracy(DepthMap(g), DepthMap(p), pairs=100_000, seed=3).accuracy
    assert abs(est - exact) <= 0.01


def test_shape_mismatch_resamples_gt():
    g = np.add.outer(np.arange(8.0), np.arange(8.0) ** 2)
    # a monotone image of the bilinear upsample ranks exactly like the resampled gt
    pred = np.exp(resample_bilinear(g, 16, 16) / 10)
    assert pairwise_accuracy(DepthMap(g), DepthMap(pred), pairs=4000).accuracy == 1.0


def test_errors():
    with pytest.raises(NoValidPairs):
        pairwise_accuracy(DepthMap(np.ones((4, 4))), DepthMap(_field(0, (4, 4))), pairs=100)
    one = np.full((3, 3), np.nan)
    one[1, 1] = 1.0
    with pytest.raises(NoValidPairs):
        pairwise_accuracy(DepthMap(one), DepthMap(one), pairs=10)
    with pytest.raises(ValueError):
        pairwise_accuracy(DepthMap(_field(0)), DepthMap(_field(0)), tau=1.0)


def test_result_document():
    r = pairwise_accuracy(DepthMap(_field(0)), DepthMap(_field(0)), pairs=100, seed=4)
    assert set(r.to_dict()) >= {"accuracy", "pairs_retained", "tau", "seed"}
