import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bvloc.bvft import DescriptorSet
from bvloc.pipeline import describe_cloud, icp_cloud, register_pair
from bvloc.pointcloud import PointCloud, Pose2D, normalize_angle, transform_cloud
from bvloc.registration import (
    ImageTransform2D,
    Match,
    RegistrationError,
    RegistrationReport,
    estimate_rigid,
    icp_refine_planar,
    image_transform_from_pose,
    match_descriptors,
    mean_residual,
    pose_from_image_transform,
    ransac_rigid,
)
from bvloc.synth import SceneSpec, synth_pair


def dset(vectors, kps=None):
    """Toy set: each row given is the primary variant, its twin is a copy."""
    v = np.repeat(np.asarray(vectors, dtype=np.float32), 2, axis=0)
    k = len(vectors)
    kps = np.zeros((k, 2), int) if kps is None else np.asarray(kps)
    return DescriptorSet("t", kps, np.zeros(k), v, np.zeros(2 * k))


def rot_err(a, b):
    return abs(normalize_angle(a - b))


# ---------------------------------------------------------------- matching


def test_self_match_is_identity(scene, cfg):
    d = describe_cloud(scene, cfg)
    m = match_descriptors(d, d, 0.9)
    assert len(m) >= 0.9 * d.n_keypoints
    # float32 vectors, so distances are zero up to rounding
    assert all(x.keypoint_a == x.keypoint_b and x.distance < 1e-6 for x in m)


def test_one_hot_unique_matches():
    eye = np.eye(4)
    m = match_descriptors(dset(eye), dset(eye[::-1]), 0.9)
    assert sorted((x.keypoint_a, x.keypoint_b) for x in m) == [(0, 3), (1, 2), (2, 1), (3, 0)]


def test_exact_tie_rejected_below_ratio_one():
    a = dset([[1, 0, 0]])
    b = dset([[0, 1, 0], [0, 0, 1]])
    assert match_descriptors(a, b, 0.9) == []
    assert len(match_descriptors(a, b, 1.0)) == 1


def test_single_b_keypoint_keeps_nearest():
    m = match_descriptors(dset([[1, 0], [0, 1]]), dset([[1, 0]]), 0.5)
    assert [(x.keypoint_a, x.keypoint_b) for x in m] == [(0, 0), (1, 0)]


def test_empty_sets_give_no_matches():
    assert match_descriptors(DescriptorSet.empty(), dset(np.eye(3))) == []


def test_variant_min_is_used():
    # keypoint 0 of a: primary far from b, flipped twin equal to b[1]
    va = np.array([[1, 0, 0], [0, 0, 1]], np.float32)
    a = DescriptorSet("a", np.zeros((1, 2), int), np.zeros(1), va, np.zeros(2))
    m = match_descriptors(a, dset([[0.9, 0.5, 0.5], [0, 0, 1]]), 0.9)
    assert [(x.index_a, x.index_b, x.distance) for x in m] == [(1, 2, 0.0)]


@given(st.integers(0, 2**31 - 1))
def test_matching_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    va, vb = rng.uniform(0, 1, (7, 5)), rng.uniform(0, 1, (9, 5))
    got = {(x.keypoint_a, x.keypoint_b) for x in match_descriptors(dset(va), dset(vb), 0.8)}
    want = set()
    for i in range(7):
        d = sorted((float(np.linalg.norm(va[i].astype(np.float32) - vb[j].astype(np.float32))), j) for j in range(9))
        if d[0][0] <= 0.8 * d[1][0] and d[0][0] != d[1][0]:
            want.add((i, d[0][1]))
    assert got == want


def test_ratio_validated():
    with pytest.raises(ValueError):
        match_descriptors(dset(np.eye(2)), dset(np.eye(2)), 0.0)


# ---------------------------------------------------------------- rigid fit


def test_estimate_rigid_exact():
    t = ImageTransform2D(math.radians(30), 5, -3)
    src = np.random.default_rng(0).uniform(-50, 50, (10, 2))
    est = estimate_rigid(src, t.apply(src))
    assert rot_err(est.theta, t.theta) < 1e-12
    assert abs(est.t_u - 5) < 1e-9 and abs(est.t_v + 3) < 1e-9


def test_image_transform_matrix_convention():
    # positive theta turns +u toward -v
    t = ImageTransform2D(math.pi / 2)
    np.testing.assert_allclose(t.apply([[1.0, 0.0]]), [[0.0, -1.0]], atol=1e-15)


def test_estimate_rigid_least_squares_grid_oracle():
    rng = np.random.default_rng(1)
    src = rng.uniform(-20, 20, (8, 2))
    dst = ImageTransform2D(0.4, 2, 1).apply(src) + rng.normal(0, 0.5, (8, 2))
    est = estimate_rigid(src, dst)

    def cost(th):
        r = ImageTransform2D(th).matrix()
        moved = src @ r.T
        t = (dst - moved).mean(axis=0)
        return ((moved + t - dst) ** 2).sum()

    grid = np.linspace(-math.pi, math.pi, 20001)
    best = grid[np.argmin([cost(th) for th in grid])]
    assert rot_err(est.theta, best) <= 2 * math.pi / 20000
    r = est.matrix()
    assert cost(est.theta) <= cost(best) + 1e-9
    np.testing.assert_allclose([est.t_u, est.t_v], (dst - src @ r.T).mean(axis=0), atol=1e-9)


def test_estimate_rigid_errors():
    with pytest.raises(ValueError):
        estimate_rigid([[0, 0]], [[1, 1]])
    with pytest.raises(ValueError, match="degenerate"):
        estimate_rigid([[1, 1], [1, 1]], [[0, 0], [1, 1]])
    with pytest.raises(ValueError):
        estimate_rigid([[0, 0], [1, 1]], [[0, 0]])


# ---------------------------------------------------------------- RANSAC


def ransac_case(n_in, n_out, seed=0):
    rng = np.random.default_rng(seed)
    t = ImageTransform2D(math.radians(-50), 12, 7)
    a = rng.uniform(-100, 100, (n_in + n_out, 2))
    b = t.apply(a)
    b[n_in:] = rng.uniform(-100, 100, (n_out, 2))
    # index_a / index_b address rows, so duplicate rows to mimic variant layout
    ka, kb = np.repeat(a, 2, axis=0), np.repeat(b, 2, axis=0)
    matches = [Match(2 * i, 2 * i, 0.0) for i in range(n_in + n_out)]
    return matches, ka, kb, t


def test_ransac_all_inliers():
    m, ka, kb, t = ransac_case(20, 0)
    res = ransac_rigid(m, ka, kb)
    assert len(res.inliers) == 20
    assert rot_err(res.transform.theta, t.theta) < 1e-9
    assert res.residual_rms < 1e-9


def test_ransac_sixty_forty():
    m, ka, kb, t = ransac_case(60, 40, seed=3)
    res = ransac_rigid(m, ka, kb)
    assert {x.index_a // 2 for x in res.inliers} >= set(range(60))
    assert math.degrees(rot_err(res.transform.theta, t.theta)) < 0.01
    assert abs(res.transform.t_u - 12) < 0.01 and abs(res.transform.t_v - 7) < 0.01


def test_ransac_inliers_satisfy_threshold():
    m, ka, kb, _ = ransac_case(30, 30, seed=4)
    kb = kb + np.random.default_rng(0).normal(0, 0.8, kb.shape)
    res = ransac_rigid(m, ka, kb, inlier_px=2.5)
    pa = ka[[x.index_a for x in res.inliers]]
    pb = kb[[x.index_b for x in res.inliers]]
    assert (np.linalg.norm(res.transform.apply(pa) - pb, axis=1) <= 2.5 + 1e-9).all()


def test_ransac_deterministic():
    m, ka, kb, _ = ransac_case(15, 35, seed=5)
    r1, r2 = ransac_rigid(m, ka, kb, rng_seed=7), ransac_rigid(m, ka, kb, rng_seed=7)
    assert r1 == r2


def test_ransac_too_few():
    m, ka, kb, _ = ransac_case(1, 0)
    with pytest.raises(RegistrationError, match="fewer than 2"):
        ransac_rigid(m, ka, kb)


def test_ransac_fails_without_consensus():
    rng = np.random.default_rng(6)
    ka, kb = rng.uniform(-100, 100, (20, 2)), rng.uniform(-100, 100, (20, 2))
    m = [Match(i, i, 0.0) for i in range(10)]
    with pytest.raises(RegistrationError, match="registration failed"):
        ransac_rigid(m, ka, kb, inlier_px=0.01)


# ---------------------------------------------------------------- pose mapping


def test_ten_pixels_is_four_metres():
    p = pose_from_image_transform(ImageTransform2D(0, 10, 0), 0.4)
    assert (p.tx, p.ty, p.theta) == (4.0, -0.0, 0.0)


@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(-3, 3))
def test_pose_image_round_trip(tx, ty, th):
    p = pose_from_image_transform(image_transform_from_pose(Pose2D(tx, ty, th), 0.4), 0.4)
    assert abs(p.tx - tx) < 1e-9 and abs(p.ty - ty) < 1e-9 and rot_err(p.theta, th) < 1e-12


def test_image_transform_agrees_with_cloud_transform():
    pose = Pose2D(3.2, -1.6, 0.7)
    xy = np.random.default_rng(7).uniform(-40, 40, (20, 2))
    uv = np.column_stack([xy[:, 0], -xy[:, 1]]) / 0.4  # centred pixel coords
    moved = pose.apply(xy)
    uv_moved = image_transform_from_pose(pose, 0.4).apply(uv)
    np.testing.assert_allclose(uv_moved, np.column_stack([moved[:, 0], -moved[:, 1]]) / 0.4, atol=1e-9)


# ---------------------------------------------------------------- ICP


@pytest.fixture(scope="module")
def icp_pair(cfg):
    truth = Pose2D(2.0, -1.0, math.radians(10))
    a, b = synth_pair(21, truth, SceneSpec(n_random_poles=40, n_random_facades=20, n_random_shrubs=40))
    return icp_cloud(a, cfg), icp_cloud(b, cfg), truth


def test_icp_aligned_stays_put(icp_pair):
    a, _, _ = icp_pair
    pose, it = icp_refine_planar(a, a, Pose2D())
    assert it <= 2 and abs(pose.tx) < 1e-9 and abs(pose.ty) < 1e-9 and abs(pose.theta) < 1e-12


@pytest.mark.parametrize("dx,dy,dth", [(0.8, 0.4, 4), (-0.6, 0.7, -5), (0.0, -1.0, 2)])
def test_icp_converges_from_perturbation(icp_pair, dx, dy, dth):
    a, b, truth = icp_pair
    init = Pose2D(truth.tx + dx, truth.ty + dy, truth.theta + math.radians(dth))
    pose, _ = icp_refine_planar(a, b, init)
    assert math.hypot(pose.tx - truth.tx, pose.ty - truth.ty) <= 0.05
    assert math.degrees(rot_err(pose.theta, truth.theta)) <= 0.2


def test_icp_never_worse_than_init(icp_pair):
    a, b, truth = icp_pair
    rng = np.random.default_rng(8)
    for _ in range(5):
        init = Pose2D(truth.tx + rng.normal(0, 3), truth.ty + rng.normal(0, 3), truth.theta + rng.normal(0, 0.3))
        pose, _ = icp_refine_planar(a, b, init)
        assert mean_residual(a, b, pose) <= mean_residual(a, b, init) + 1e-12


def test_icp_empty_cloud_errors():
    with pytest.raises(ValueError):
        icp_refine_planar(PointCloud(np.zeros((0, 3))), PointCloud(np.ones((3, 3))), Pose2D())


# ---------------------------------------------------------------- end to end


@pytest.mark.parametrize("deg", [0, 30, 150, 210, 330])
def test_register_pair_recovers_pose(cfg, deg):
    truth = Pose2D(3.0, -2.0, math.radians(deg))
    a, b = synth_pair(30, truth)
    rep = register_pair(a, b, cfg)
    assert math.hypot(rep.pose.tx - truth.tx, rep.pose.ty - truth.ty) < 0.5 * cfg.g
    assert math.degrees(rot_err(rep.pose.theta, truth.theta)) < 1.0
    assert rep.inliers >= 3


def test_forward_and_backward_are_inverse(cfg):
    a, b = synth_pair(31, Pose2D(-4.0, 1.5, math.radians(-60)))
    ab, ba = register_pair(a, b, cfg).pose, register_pair(b, a, cfg).pose
    e = ab * ba
    assert math.hypot(e.tx, e.ty) < 0.1 and math.degrees(abs(e.theta)) < 0.5


def test_report_line_format():
    r = RegistrationReport("a", "b", Pose2D(1, 2, math.pi / 2), 7, 0.5)
    assert RegistrationReport.HEADER.count(",") == r.line().count(",")
    assert r.line() == "a,b,90.000000,1.000000,2.000000,7,0.500000"


def test_transform_cloud_matches_register_semantics(cfg):
    truth = Pose2D(1.0, 1.0, math.radians(210))
    a, b = synth_pair(32, truth)
    moved = transform_cloud(a, register_pair(a, b, cfg).pose)
    assert mean_residual(icp_cloud(moved, cfg), icp_cloud(b, cfg), Pose2D()) < 0.3
