"""Descriptor matching, robust 2D rigid fitting and planar ICP.

Image transforms act on pixel coordinates centred on the sensor origin
(``u - c``, ``v - c`` with c the BV image centre):

    u' =  cos(theta) u + sin(theta) v + t_u
    v' = -sin(theta) u + cos(theta) v + t_v

With the BV raster convention (u along +x, v along -y) this is exactly the
metric pose ``(g t_u, -g t_v, theta)`` acting on Lidar (x, y).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .bvft import DescriptorSet
from .pointcloud import PointCloud, Pose2D, normalize_angle


class RegistrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Match:
    index_a: int  # descriptor row in a (primary or flipped variant)
    index_b: int  # descriptor row in b (always a primary row)
    distance: float

    @property
    def keypoint_a(self) -> int:
        return self.index_a // 2

    @property
    def keypoint_b(self) -> int:
        return self.index_b // 2


# ---------------------------------------------------------------- matching


def _pairwise_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = a.astype(np.float64)
    b = b.astype(np.float64)
    d2 = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.sqrt(np.maximum(d2, 0.0))


def match_descriptors(a: DescriptorSet, b: DescriptorSet, ratio: float = 0.9) -> list[Match]:
    """Ratio-test matching of a's keypoints against b's primary descriptors.

    Each keypoint of a is represented by the closer of its two variants. When
    b holds a single keypoint the ratio test cannot apply and the nearest is
    kept.
    """
    if not 0 < ratio <= 1:
        raise ValueError("ratio must lie in (0, 1]")
    if len(a) == 0 or len(b) == 0:
        return []
    d = _pairwise_dist(a.vectors, b.vectors[0::2])  # (2Ka, Kb)
    dk = d.reshape(a.n_keypoints, 2, -1)
    variant = np.argmin(dk, axis=1)  # (Ka, Kb), ties -> primary
    dmin = np.take_along_axis(dk, variant[:, None, :], axis=1)[:, 0, :]
    out = []
    if dmin.shape[1] == 1:
        for i in range(dmin.shape[0]):
            out.append(Match(2 * i + int(variant[i, 0]), 0, float(dmin[i, 0])))
        return out
    order = np.argsort(dmin, axis=1, kind="stable")
    rows = np.arange(dmin.shape[0])
    j1, j2 = order[:, 0], order[:, 1]
    d1, d2 = dmin[rows, j1], dmin[rows, j2]
    # d1 <= ratio * d2 rejects exact ties only when ratio < 1
    keep = (d1 <= ratio * d2) & ~((d1 == d2) & (ratio < 1))
    for i in np.nonzero(keep)[0]:
        out.append(Match(2 * int(i) + int(variant[i, j1[i]]), 2 * int(j1[i]), float(d1[i])))
    return out


# ---------------------------------------------------------------- rigid fits


@dataclass(frozen=True)
class ImageTransform2D:
    theta: float = 0.0
    t_u: float = 0.0
    t_v: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", normalize_angle(float(self.theta)))
        object.__setattr__(self, "t_u", float(self.t_u))
        object.__setattr__(self, "t_v", float(self.t_v))

    def matrix(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, s], [-s, c]])

    def apply(self, uv: np.ndarray) -> np.ndarray:
        uv = np.asarray(uv, dtype=np.float64)
        return uv @ self.matrix().T + np.array([self.t_u, self.t_v])


def _kabsch(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares R, t with dst ~ src @ R.T + t (proper rotation)."""
    ms, md = src.mean(axis=0), dst.mean(axis=0)
    h = (src - ms).T @ (dst - md)
    # closed form for 2x2: angle maximising trace(R^T H)
    ang = math.atan2(h[0, 1] - h[1, 0], h[0, 0] + h[1, 1])
    c, s = math.cos(ang), math.sin(ang)
    r = np.array([[c, -s], [s, c]])
    return r, md - ms @ r.T


def estimate_rigid(src, dst) -> ImageTransform2D:
    """Fit ``dst ~ T(src)`` in the image convention; needs >= 2 points."""
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    if src.shape != dst.shape:
        raise ValueError("source and destination point counts differ")
    if len(src) < 2:
        raise ValueError("need at least 2 correspondences")
    if np.ptp(src, axis=0).max() == 0:
        raise ValueError("degenerate configuration: all source points coincide")
    r, t = _kabsch(src, dst)
    # image convention stores the clockwise-positive angle
    return ImageTransform2D(-math.atan2(r[1, 0], r[0, 0]), t[0], t[1])


@dataclass(frozen=True)
class RansacResult:
    transform: ImageTransform2D
    inliers: list
    iterations_used: int
    residual_rms: float = 0.0


def _hypotheses(sa: np.ndarray, sb: np.ndarray, i: np.ndarray, j: np.ndarray):
    """Vectorised 2-point rigid fits. Returns (cos, sin, tx, ty, ok)."""
    pa, qa = sa[i], sa[j]
    pb, qb = sb[i], sb[j]
    da, db = qa - pa, qb - pb
    ok = (np.hypot(da[:, 0], da[:, 1]) > 1e-9)
    # CCW angle of the rotation taking da to db
    ang = np.arctan2(db[:, 1], db[:, 0]) - np.arctan2(da[:, 1], da[:, 0])
    c, s = np.cos(ang), np.sin(ang)
    ma, mb = (pa + qa) / 2, (pb + qb) / 2
    tx = mb[:, 0] - (c * ma[:, 0] - s * ma[:, 1])
    ty = mb[:, 1] - (s * ma[:, 0] + c * ma[:, 1])
    return c, s, tx, ty, ok


def ransac_rigid(
    matches: list[Match],
    kps_a: np.ndarray,
    kps_b: np.ndarray,
    inlier_px: float = 2.5,
    max_iters: int = 2000,
    confidence: float = 0.999,
    rng_seed: int = 0,
    batch: int = 128,
) -> RansacResult:
    """2-point RANSAC on matched keypoint positions (rows of ``kps_*``,
    indexed by descriptor row, already centred)."""
    if len(matches) < 2:
        raise RegistrationError("fewer than 2 matches")
    rng = np.random.default_rng(rng_seed)
    ia = np.array([m.index_a for m in matches])
    ib = np.array([m.index_b for m in matches])
    sa = np.asarray(kps_a, dtype=np.float64)[ia]
    sb = np.asarray(kps_b, dtype=np.float64)[ib]
    n = len(matches)
    thr2 = inlier_px**2

    best_count, best_idx, best_mask = -1, -1, None
    needed = max_iters
    done = 0
    while done < min(needed, max_iters):
        k = min(batch, max_iters - done)
        i = rng.integers(0, n, k)
        j = rng.integers(0, n - 1, k)
        j = j + (j >= i)  # distinct second index
        c, s, tx, ty, ok = _hypotheses(sa, sb, i, j)
        px = c[:, None] * sa[None, :, 0] - s[:, None] * sa[None, :, 1] + tx[:, None]
        py = s[:, None] * sa[None, :, 0] + c[:, None] * sa[None, :, 1] + ty[:, None]
        inl = ((px - sb[None, :, 0]) ** 2 + (py - sb[None, :, 1]) ** 2) <= thr2
        counts = np.where(ok, inl.sum(axis=1), -1)
        h = int(np.argmax(counts))  # first maximum -> lowest hypothesis index
        if counts[h] > best_count:
            best_count, best_idx, best_mask = int(counts[h]), done + h, inl[h]
            w = best_count / n
            if w >= 1.0:
                needed = done + h + 1
            elif w > 0:
                needed = math.ceil(math.log(1 - confidence) / math.log(1 - w * w))
        done += k
    if best_count < 3:
        raise RegistrationError("registration failed: no hypothesis with >= 3 inliers")

    # polish: refit on inliers, re-collect, until the set stops changing
    mask = best_mask
    for _ in range(10):
        r, t = _kabsch(sa[mask], sb[mask])
        res2 = ((sa @ r.T + t - sb) ** 2).sum(axis=1)
        new = res2 <= thr2
        if new.sum() < 3 or np.array_equal(new, mask):
            break
        mask = new
    r, t = _kabsch(sa[mask], sb[mask])
    res2 = ((sa @ r.T + t - sb) ** 2).sum(axis=1)
    mask = mask & (res2 <= thr2)  # guarantee the post-condition
    if mask.sum() < 3:
        raise RegistrationError("registration failed: no hypothesis with >= 3 inliers")
    tr = ImageTransform2D(-math.atan2(r[1, 0], r[0, 0]), t[0], t[1])
    rms = float(math.sqrt(res2[mask].mean()))
    return RansacResult(tr, [m for m, k in zip(matches, mask) if k], min(done, max(needed, best_idx + 1)), rms)


# ---------------------------------------------------------------- pose mapping


def pose_from_image_transform(t: ImageTransform2D, g: float) -> Pose2D:
    if not g > 0:
        raise ValueError("g must be positive")
    return Pose2D(g * t.t_u, -g * t.t_v, t.theta)


def image_transform_from_pose(p: Pose2D, g: float) -> ImageTransform2D:
    if not g > 0:
        raise ValueError("g must be positive")
    return ImageTransform2D(p.theta, p.tx / g, -p.ty / g)


# ---------------------------------------------------------------- ICP


def _associate(tree: cKDTree, pts: np.ndarray, pose: Pose2D, max_dist: float):
    """Nearest neighbours within ``max_dist``; returns (dist, idx, truncated mean)."""
    d, idx = tree.query(pose.apply(pts), distance_upper_bound=max_dist)
    d = np.minimum(d, max_dist)  # misses come back as inf
    return d, idx, float(d.mean())


def icp_refine_planar(
    a: PointCloud,
    b: PointCloud,
    init: Pose2D,
    max_iter: int = 100,
    tol: float = 1e-4,
    max_dist: float = 1.0,
) -> tuple[Pose2D, int]:
    """Point-to-point ICP over (x, y); returns ``(pose, iterations)``.

    Pairs farther than ``max_dist`` are left out of the fit and their
    residual is truncated at ``max_dist``. A step is only accepted when the
    truncated mean residual does not grow, so the result is never worse than
    ``init``.
    """
    if len(a) == 0 or len(b) == 0:
        raise ValueError("empty cloud")
    src = np.asarray(a.xy)
    tgt = np.asarray(b.xy)
    tree = cKDTree(tgt)
    pose = init
    d, idx, err = _associate(tree, src, pose, max_dist)
    it = 0
    for it in range(1, max_iter + 1):
        sel = d < max_dist
        if sel.sum() < 3:
            break
        r, t = _kabsch(src[sel], tgt[idx[sel]])
        cand = Pose2D(t[0], t[1], math.atan2(r[1, 0], r[0, 0]))
        d_new, idx_new, new_err = _associate(tree, src, cand, max_dist)
        if new_err > err:
            break
        delta = err - new_err
        pose, d, idx, err = cand, d_new, idx_new, new_err
        if delta < tol:
            break
    return pose, it


def mean_residual(a: PointCloud, b: PointCloud, pose: Pose2D, max_dist: float = 1.0) -> float:
    """Truncated mean nearest-neighbour distance of ``pose(a)`` to ``b`` in (x, y)."""
    return _associate(cKDTree(np.asarray(b.xy)), np.asarray(a.xy), pose, max_dist)[2]


# ---------------------------------------------------------------- report


@dataclass(frozen=True)
class RegistrationReport:
    frame_a: str
    frame_b: str
    pose: Pose2D
    inliers: int
    residual_rms: float  # pixels, over RANSAC inliers

    HEADER = "frame_a,frame_b,theta_deg,tx,ty,inliers,residual_rms"

    def line(self) -> str:
        return (
            f"{self.frame_a},{self.frame_b},{math.degrees(self.pose.theta):.6f},"
            f"{self.pose.tx:.6f},{self.pose.ty:.6f},{self.inliers},{self.residual_rms:.6f}"
        )
