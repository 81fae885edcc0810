"""Point clouds, planar poses, file I/O and basic filters.

Coordinates follow a right/forward/up convention: x to the right, y forward,
z up, all in meters.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

FORMATS = ("xyz-ascii", "xyz-bin")


class CloudFormatError(ValueError):
    pass


def normalize_angle(theta: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    a = math.remainder(theta, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    return a


@dataclass(frozen=True)
class Pose2D:
    """Planar rigid transform: rotate by ``theta`` about z, then translate."""

    tx: float = 0.0
    ty: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "tx", float(self.tx))
        object.__setattr__(self, "ty", float(self.ty))
        object.__setattr__(self, "theta", normalize_angle(float(self.theta)))

    @classmethod
    def identity(cls) -> Pose2D:
        return cls(0.0, 0.0, 0.0)

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> Pose2D:
        return cls(m[0, 2], m[1, 2], math.atan2(m[1, 0], m[0, 0]))

    def matrix(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s, self.tx], [s, c, self.ty], [0.0, 0.0, 1.0]])

    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s], [s, c]])

    def apply(self, xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy, dtype=np.float64)
        return xy @ self.rotation().T + np.array([self.tx, self.ty])

    def compose(self, other: Pose2D) -> Pose2D:
        """``self * other``: apply ``other`` first, then ``self``."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2D(
            self.tx + c * other.tx - s * other.ty,
            self.ty + s * other.tx + c * other.ty,
            self.theta + other.theta,
        )

    __mul__ = compose

    def inverse(self) -> Pose2D:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2D(-(c * self.tx + s * self.ty), s * self.tx - c * self.ty, -self.theta)

    def translation_norm(self) -> float:
        return math.hypot(self.tx, self.ty)


def _frozen(points) -> np.ndarray:
    arr = np.array(points, dtype=np.float64, copy=True).reshape(-1, 3)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PointCloud:
    """An (N, 3) float64 array of points plus an id and an optional global pose."""

    points: np.ndarray
    frame_id: str = ""
    pose: Pose2D | None = None

    def __post_init__(self):
        pts = _frozen(self.points)
        if not np.isfinite(pts).all():
            raise ValueError("point cloud contains non-finite coordinates")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def xy(self) -> np.ndarray:
        return self.points[:, :2]

    def with_points(self, points: np.ndarray) -> PointCloud:
        return PointCloud(points, self.frame_id, self.pose)

    def with_pose(self, pose: Pose2D | None) -> PointCloud:
        return PointCloud(self.points, self.frame_id, pose)


# ---------------------------------------------------------------- file I/O


def _parse_ascii_strict(path: Path) -> np.ndarray:
    rows = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.split("#", 1)[0].strip()
            if not s:
                continue
            parts = s.split()
            if len(parts) != 3:
                raise CloudFormatError(f"{path}:{lineno}: expected 3 values, got {len(parts)}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                raise CloudFormatError(f"{path}:{lineno}: unparsable number in {s!r}") from None
    return np.array(rows, dtype=np.float64).reshape(-1, 3)


def read_points(path, fmt: str = "xyz-ascii") -> tuple[np.ndarray, int]:
    """Parse a point file. Returns ``(finite_points, n_rejected)``.

    Raises CloudFormatError on malformed content or when nothing valid
    remains; OSError propagates for unreadable files.
    """
    path = Path(path)
    if fmt == "xyz-ascii":
        try:
            with warnings.catch_warnings():  # empty files warn
                warnings.simplefilter("ignore", UserWarning)
                pts = np.loadtxt(path, dtype=np.float64, comments="#", ndmin=2)
            if pts.size and pts.shape[1] != 3:
                raise ValueError
            pts = pts.reshape(-1, 3)
        except ValueError:
            # slow pass, only to report the offending line
            pts = _parse_ascii_strict(path)
    elif fmt == "xyz-bin":
        raw = path.read_bytes()
        if len(raw) % 12:
            raise CloudFormatError(
                f"{path}: length {len(raw)} is not a multiple of 12 "
                f"(trailing record at offset {len(raw) - len(raw) % 12})"
            )
        pts = np.frombuffer(raw, dtype="<f4").reshape(-1, 3).astype(np.float64)
    else:
        raise CloudFormatError(f"unknown cloud format {fmt!r}; expected one of {FORMATS}")

    finite = np.isfinite(pts).all(axis=1)
    n_rejected = int((~finite).sum())
    pts = pts[finite]
    if pts.shape[0] == 0:
        raise CloudFormatError(f"{path}: no valid points")
    return pts, n_rejected


def load_cloud(path, fmt: str | None = None, frame_id: str | None = None) -> PointCloud:
    """Load a cloud; the format is inferred from the suffix when not given
    (``.bin`` means xyz-bin, anything else xyz-ascii)."""
    path = Path(path)
    fmt = fmt or guess_format(path)
    pts, n_rejected = read_points(path, fmt)
    if n_rejected:
        log.warning("%s: rejected %d non-finite point(s)", path, n_rejected)
    return PointCloud(pts, frame_id if frame_id is not None else path.stem)


def save_cloud(cloud: PointCloud, path, fmt: str | None = None) -> None:
    path = Path(path)
    fmt = fmt or guess_format(path)
    if fmt == "xyz-bin":
        path.write_bytes(cloud.points.astype("<f4").tobytes())
    elif fmt == "xyz-ascii":
        with path.open("w", encoding="utf-8") as fh:
            fh.write(f"# {cloud.frame_id}\n")
            np.savetxt(fh, cloud.points, fmt="%.9g")
    else:
        raise CloudFormatError(f"unknown cloud format {fmt!r}")


def guess_format(path) -> str:
    return "xyz-bin" if Path(path).suffix.lower() == ".bin" else "xyz-ascii"


# ---------------------------------------------------------------- filters


def voxel_filter(cloud: PointCloud, g: float) -> PointCloud:
    """Replace the points of every occupied g x g x g voxel by their centroid.

    Output is ordered by voxel index (lexicographic x, y, z).
    """
    if not g > 0:
        raise ValueError(f"voxel size must be positive, got {g}")
    pts = cloud.points
    if len(pts) == 0:
        return cloud
    keys = np.floor(pts / g).astype(np.int64)
    lo = keys.min(axis=0)
    span = keys.max(axis=0) - lo + 1
    flat = np.ravel_multi_index((keys - lo).T, span)
    order = np.argsort(flat, kind="stable")
    srt = pts[order]
    starts = np.flatnonzero(np.r_[True, np.diff(flat[order]) != 0])
    counts = np.diff(np.r_[starts, len(srt)])
    out = np.add.reduceat(srt, starts, axis=0) / counts[:, None]
    # rounding in the mean must not push a centroid out of its voxel
    out = np.clip(out, np.minimum.reduceat(srt, starts, axis=0), np.maximum.reduceat(srt, starts, axis=0))
    return cloud.with_points(out)


def crop_window(cloud: PointCloud, C: float) -> PointCloud:
    """Keep points with |x|, |y|, |z| <= C (boundary inclusive)."""
    if not C > 0:
        raise ValueError(f"window half-size must be positive, got {C}")
    keep = (np.abs(cloud.points) <= C).all(axis=1)
    return cloud.with_points(cloud.points[keep])


def transform_cloud(cloud: PointCloud, pose: Pose2D) -> PointCloud:
    """Rotate about z by ``pose.theta`` then translate by (tx, ty); z is kept."""
    out = np.array(cloud.points)
    out[:, :2] = pose.apply(cloud.points[:, :2])
    return cloud.with_points(out)


def remove_ground(cloud: PointCloud, g: float, margin: float | None = None) -> PointCloud:
    """Drop points near the most populated horizontal voxel layer.

    A crude flat-ground assumption, good enough to keep ICP from locking onto
    the uniform ground disc.
    """
    if len(cloud) == 0:
        return cloud
    margin = g if margin is None else margin
    layer = np.floor(cloud.points[:, 2] / g).astype(np.int64)
    vals, counts = np.unique(layer, return_counts=True)
    z0 = (vals[np.argmax(counts)] + 0.5) * g
    keep = np.abs(cloud.points[:, 2] - z0) > margin
    return cloud.with_points(cloud.points[keep])
