"""Cloud -> BV image -> descriptors -> registration, with a cached filter bank."""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from .bvft import DescriptorSet, describe_frame
from .bvimage import BvImage, build_bv_image, grid_size, image_center
from .config import Config
from .loggabor import FilterBank, LogGaborParams, build_bank
from .pointcloud import PointCloud, Pose2D, crop_window, remove_ground, voxel_filter
from .registration import (
    RegistrationReport,
    icp_refine_planar,
    match_descriptors,
    pose_from_image_transform,
    ransac_rigid,
)


@lru_cache(maxsize=8)
def cached_bank(size: int, params: LogGaborParams) -> FilterBank:
    return build_bank(size, size, params)


def preprocess(cloud: PointCloud, cfg: Config) -> PointCloud:
    """Voxel filter at leaf g, then crop to the BV window."""
    return crop_window(voxel_filter(cloud, cfg.g), cfg.C)


def bv_image(cloud: PointCloud, cfg: Config) -> BvImage:
    return build_bv_image(preprocess(cloud, cfg), cfg.g, cfg.C)


def _describe_filtered(filtered: PointCloud, cfg: Config) -> DescriptorSet:
    img = build_bv_image(filtered, cfg.g, cfg.C)
    bank = cached_bank(grid_size(cfg.g, cfg.C), cfg.bank)
    return describe_frame(img, bank, cfg.bvft, filtered.frame_id)


def describe_cloud(cloud: PointCloud, cfg: Config) -> DescriptorSet:
    return _describe_filtered(preprocess(cloud, cfg), cfg)


def centred_positions(ds: DescriptorSet, cfg: Config) -> np.ndarray:
    return ds.positions().astype(np.float64) - image_center(cfg.g, cfg.C)


def register_descriptors(da: DescriptorSet, db: DescriptorSet, cfg: Config, seed: int | None = None):
    """RANSAC pose of b relative to a: ``transform_cloud(a, pose)`` ~ b."""
    rc = cfg.registration
    matches = match_descriptors(da, db, rc.ratio)
    res = ransac_rigid(
        matches,
        centred_positions(da, cfg),
        centred_positions(db, cfg),
        rc.inlier_px,
        rc.max_iters,
        rc.confidence,
        cfg.seed if seed is None else seed,
    )
    return pose_from_image_transform(res.transform, cfg.g), res


def icp_cloud(cloud: PointCloud, cfg: Config, min_column: int = 2) -> PointCloud:
    """Ground-removed voxel cloud for planar ICP.

    Points in (x, y) cells backed by fewer than ``min_column`` voxels are
    dropped: isolated returns would otherwise capture ICP associations, while
    vertical structure always spans several voxels.
    """
    return _icp_filtered(preprocess(cloud, cfg), cfg, min_column)


def _icp_filtered(filtered: PointCloud, cfg: Config, min_column: int = 2) -> PointCloud:
    pts = np.array(remove_ground(filtered, cfg.g).points)
    if len(pts) == 0:
        return filtered.with_points(pts)
    keys = np.floor(pts[:, :2] / cfg.g).astype(np.int64)
    _, inv, cnt = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    return filtered.with_points(pts[cnt[inv.ravel()] >= min_column])


def register_pair(a: PointCloud, b: PointCloud, cfg: Config | None = None, seed: int | None = None) -> RegistrationReport:
    cfg = cfg or Config()
    fa, fb = preprocess(a, cfg), preprocess(b, cfg)  # shared by both stages
    da, db = _describe_filtered(fa, cfg), _describe_filtered(fb, cfg)
    pose, res = register_descriptors(da, db, cfg, seed)
    if cfg.registration.icp:
        pose = _refine_filtered(fa, fb, pose, cfg)
    return RegistrationReport(a.frame_id, b.frame_id, pose, len(res.inliers), res.residual_rms)


def refine(a: PointCloud, b: PointCloud, init: Pose2D, cfg: Config) -> Pose2D:
    return _refine_filtered(preprocess(a, cfg), preprocess(b, cfg), init, cfg)


def _refine_filtered(fa: PointCloud, fb: PointCloud, init: Pose2D, cfg: Config) -> Pose2D:
    rc = cfg.registration
    ca, cb = _icp_filtered(fa, cfg), _icp_filtered(fb, cfg)
    if len(ca) == 0 or len(cb) == 0:
        return init
    pose, _ = icp_refine_planar(ca, cb, init, rc.icp_max_iter, rc.icp_tol, rc.icp_max_dist)
    return pose
