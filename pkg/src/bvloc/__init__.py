"""Lidar place recognition and pose estimation from bird's-eye-view density images.

Pipeline: point cloud -> BV density image -> Log-Gabor maximum index map ->
rotation-invariant BVFT descriptors -> bag-of-words retrieval and RANSAC + ICP
registration.
"""
from .bvft import BvftConfig, DescriptorSet, describe_frame, detect_fast
from .bvimage import BvImage, build_bv_image
from .config import Config
from .loggabor import LogGaborParams, build_bank, compute_mim
from .pipeline import describe_cloud, register_pair
from .pointcloud import PointCloud, Pose2D, load_cloud, transform_cloud, voxel_filter
from .registration import match_descriptors, ransac_rigid
from .retrieval import KeyframeDb, build_database, load_db, save_db

__version__ = "0.1.0"

__all__ = [
    "BvImage", "BvftConfig", "Config", "DescriptorSet", "KeyframeDb", "LogGaborParams",
    "PointCloud", "Pose2D", "build_bank", "build_bv_image", "build_database", "compute_mim",
    "describe_cloud", "describe_frame", "detect_fast", "load_cloud", "load_db",
    "match_descriptors", "ransac_rigid", "register_pair", "save_db", "transform_cloud",
    "voxel_filter",
]
