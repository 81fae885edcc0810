import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bvloc.evaluation import RecallCurve, eval_pose, eval_recall, first_hit_ranks, recall_from_ranks, relative_errors
from bvloc.pointcloud import Pose2D
from bvloc.retrieval import Dictionary, Keyframe, KeyframeDb, global_descriptor

from .test_retrieval import rows

poses = st.builds(Pose2D, st.floats(-100, 100), st.floats(-100, 100), st.floats(-4, 4))


def db_from(descs, poses_):
    b = descs.shape[1]
    entries = [Keyframe(f"k{i:02d}", p, d, rows(np.zeros((2, 2)))) for i, (d, p) in enumerate(zip(descs, poses_))]
    return KeyframeDb(Dictionary(np.eye(b, 2)), np.ones(b), entries)


def random_db(seed, n=12, b=8):
    # continuous weights: exact distance ties have probability zero
    rng = np.random.default_rng(seed)
    descs = np.array([global_descriptor(rng.uniform(0, 3, b), np.ones(b)) for _ in range(n)])
    ps = [Pose2D(float(x), float(y), 0) for x, y in rng.uniform(0, 60, (n, 2))]
    return db_from(descs, ps), rng


def test_self_queries_recall_one():
    db, _ = random_db(0)
    curve = eval_recall(db, [(e.descriptor, e.pose) for e in db.entries], t=25)
    assert curve.at(1) == 1.0 and curve.n_queries == len(db)


def test_zero_threshold_gives_zero_recall():
    db, _ = random_db(1)
    curve = eval_recall(db, [(e.descriptor, e.pose) for e in db.entries], t=0, n_max=5)
    assert curve.recall == (0.0,) * 5


@given(st.integers(0, 2**31 - 1))
def test_recall_matches_exhaustive_oracle(seed):
    db, rng = random_db(seed)
    qs = [(global_descriptor(rng.uniform(0, 3, 8), np.ones(8)), Pose2D(*rng.uniform(0, 60, 2), 0)) for _ in range(7)]
    curve = eval_recall(db, qs, t=15, n_max=12)
    want = []
    for n in range(1, 13):
        hits = 0
        for q, truth in qs:
            order = sorted(db.entries, key=lambda e: (math.sqrt(math.fsum((e.descriptor - q) ** 2)), e.frame_id))[:n]
            hits += any(math.hypot(e.pose.tx - truth.tx, e.pose.ty - truth.ty) < 15 for e in order)
        want.append(hits / len(qs))
    np.testing.assert_allclose(curve.recall, want)
    assert all(b >= a for a, b in zip(curve.recall, curve.recall[1:]))


def test_first_hit_ranks_strict():
    truth = [Pose2D(0, 0, 0)]
    assert first_hit_ranks([[Pose2D(25, 0, 0), Pose2D(24.9, 0, 0)]], truth, 25).tolist() == [2]
    assert first_hit_ranks([[Pose2D(25, 0, 0)]], truth, 25).tolist() == [0]


def test_recall_from_ranks_and_curve_access():
    c = recall_from_ranks(np.array([1, 3, 0, 2]), 4, 25)
    assert c.recall == (0.25, 0.5, 0.75, 0.75)
    assert c.rows()[0] == (1, 0.25)
    with pytest.raises(IndexError):
        c.at(5)
    assert isinstance(c, RecallCurve)


def test_recall_empty_inputs():
    db, _ = random_db(2)
    with pytest.raises(ValueError):
        eval_recall(db, [])


# ---------------------------------------------------------------- pose errors


def test_identical_pose_success():
    r = eval_pose([Pose2D(3, 4, 1)], [Pose2D(3, 4, 1)])
    assert r.rte[0] < 1e-12 and r.rre[0] < 1e-12 and r.success_rate == 1.0


def test_two_metre_offset_fails_strictly():
    r = eval_pose([Pose2D(2, 0, 0), Pose2D(1.999, 0, 0)], [Pose2D(), Pose2D()])
    assert r.success.tolist() == [False, True]
    r = eval_pose([Pose2D(0, 0, math.radians(5))], [Pose2D()])
    assert not r.success[0]


def se2(p):
    c, s = math.cos(p.theta), math.sin(p.theta)
    return np.array([[c, -s, p.tx], [s, c, p.ty], [0, 0, 1.0]])


@given(poses, poses)
def test_relative_errors_matrix_oracle(est, truth):
    m = np.linalg.inv(se2(truth)) @ se2(est)
    rte, rre = relative_errors(est, truth)
    assert abs(rte - math.hypot(m[0, 2], m[1, 2])) <= 1e-9
    assert abs(rre - abs(math.degrees(math.atan2(m[1, 0], m[0, 0])))) <= 1e-9


@given(poses, poses, poses)
def test_pose_errors_invariant_to_common_frame(est, truth, world):
    a = relative_errors(est, truth)
    b = relative_errors(world * est, world * truth)
    assert abs(a[0] - b[0]) <= 1e-6 and abs(a[1] - b[1]) <= 1e-6


def test_aggregate_over_successes_only():
    r = eval_pose([Pose2D(1, 0, 0), Pose2D(0.5, 0, 0), Pose2D(10, 0, 0)], [Pose2D()] * 3)
    assert math.isclose(r.mean_rte, 0.75) and math.isclose(r.std_rte, 0.25)
    assert math.isclose(r.success_rate, 2 / 3)


def test_length_mismatch():
    with pytest.raises(ValueError):
        eval_pose([Pose2D()], [])
