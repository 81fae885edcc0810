"""Randomised invariant suites, 1000 examples each.

Hypothesis draws seeds and shape parameters; numpy builds the arrays from
them, which keeps a thousand cases per property fast.
"""
import math
from collections import Counter

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from bvloc.bvft import BvftConfig, Keypoint, build_descriptor, describe_keypoints
from bvloc.bvimage import EmptyWindowError, build_bv_image
from bvloc.evaluation import eval_recall, recall_from_ranks
from bvloc.loggabor import Mim, build_bank, mim_from_image
from bvloc.pointcloud import PointCloud, Pose2D
from bvloc.retrieval import Dictionary, Keyframe, KeyframeDb, global_descriptor

N = 1000
seeds = st.integers(0, 2**32 - 1)
_BANKS = {n: build_bank(n, n) for n in (32, 48, 64)}
_CFG = BvftConfig()
CALLS = Counter()  # executed examples per suite, read by the acceptance test


@settings(max_examples=N)
@given(seeds, st.integers(1, 3000), st.sampled_from([0.2, 0.4, 1.0]), st.sampled_from([10.0, 25.0, 50.0]))
def test_bv_intensity_in_unit_range(seed, n, g, c):
    CALLS["test_bv_intensity_in_unit_range"] += 1
    rng = np.random.default_rng(seed)
    spread = rng.uniform(0.5, 2.0) * c
    pts = rng.normal(0, spread / 3, (n, 3))
    pts[: rng.integers(0, n + 1)] = rng.normal(0, 0.3, 3)  # a dense pile
    try:
        img = build_bv_image(PointCloud(pts), g, c)
    except EmptyWindowError:
        return
    v = img.intensity
    assert v.min() >= 0.0 and v.max() <= 1.0
    assert v.max() == 1.0  # the 99th percentile cell saturates
    assert np.isfinite(v).all()


@settings(max_examples=N)
@given(seeds, st.sampled_from(sorted(_BANKS)), st.floats(0.0, 0.99), st.floats(1e-3, 1e3))
def test_mim_index_range(seed, n, sparsity, scale):
    CALLS["test_mim_index_range"] += 1
    rng = np.random.default_rng(seed)
    img = rng.uniform(0, 1, (n, n)) * (rng.uniform(0, 1, (n, n)) > sparsity) * scale
    m = mim_from_image(img, _BANKS[n])
    assert m.index.dtype.kind == "i"
    assert m.index.min() >= 0 and m.index.max() <= 5
    assert m.valid.dtype == bool and m.valid.shape == (n, n)


@settings(max_examples=N)
@given(seeds, st.integers(0, 6), st.floats(0.0, 0.95))
def test_descriptor_length_and_norm(seed, n_labels, invalid_frac):
    CALLS["test_descriptor_length_and_norm"] += 1
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, max(n_labels, 1), (96, 96))
    labels[rng.uniform(size=(96, 96)) < invalid_frac] = -1
    labels[rng.integers(96), rng.integers(96)] = rng.integers(0, 6)  # at least one valid
    d = build_descriptor(labels)
    assert d.shape == (216,) and (d >= 0).all()
    assert abs(float(np.linalg.norm(d)) - 1.0) <= 1e-6


@settings(max_examples=N)
@given(seeds, st.integers(1, 6))
def test_batched_descriptors_unit_norm(seed, k):
    CALLS["test_batched_descriptors_unit_norm"] += 1
    rng = np.random.default_rng(seed)
    size = 110
    idx = rng.integers(0, 6, (size, size))
    valid = rng.uniform(size=(size, size)) > rng.uniform(0, 0.9)
    mim = Mim(idx, np.ones((size, size)), valid, 6)
    kps = [Keypoint(int(u), int(v)) for u, v in rng.integers(47, size - 49, (k, 2))]
    ds = describe_keypoints(mim, kps, _CFG)
    assert ds.vectors.shape == (2 * k, 216)
    np.testing.assert_allclose(np.linalg.norm(ds.vectors, axis=1), 1.0, atol=1e-6)


@settings(max_examples=N)
@given(st.lists(st.integers(0, 30), min_size=1, max_size=200), st.integers(1, 30))
def test_recall_curve_monotone(ranks, n_max):
    CALLS["test_recall_curve_monotone"] += 1
    c = recall_from_ranks(np.array(ranks), n_max, 25.0)
    assert len(c.recall) == n_max
    assert all(0.0 <= r <= 1.0 for r in c.recall)
    assert all(b >= a for a, b in zip(c.recall, c.recall[1:]))


@settings(max_examples=N)
@given(seeds, st.integers(1, 15), st.integers(1, 10), st.floats(0, 60))
def test_eval_recall_monotone(seed, n_db, n_q, t):
    CALLS["test_eval_recall_monotone"] += 1
    rng = np.random.default_rng(seed)
    b = 6
    dummy = describe_keypoints(Mim(np.zeros((100, 100), int), np.ones((100, 100)), np.ones((100, 100), bool), 6), [], _CFG)
    entries = [
        Keyframe(f"k{i}", _pose(rng), global_descriptor(rng.integers(0, 4, b), np.ones(b)), dummy) for i in range(n_db)
    ]
    db = KeyframeDb(Dictionary(np.eye(b)), np.ones(b), entries)
    qs = [(global_descriptor(rng.integers(0, 4, b), np.ones(b)), _pose(rng)) for _ in range(n_q)]
    c = eval_recall(db, qs, t, n_max=n_db + 2)
    assert all(0.0 <= r <= 1.0 for r in c.recall)
    assert all(y >= x for x, y in zip(c.recall, c.recall[1:]))
    # beyond the db size every retrievable query has been retrieved
    assert c.recall[-1] == c.recall[n_db - 1]


def _pose(rng):
    x, y = rng.uniform(-50, 50, 2)
    return Pose2D(float(x), float(y), float(rng.uniform(-math.pi, math.pi)))
