"""Bird's-eye-view density images.

Grid layout: the image is a D x D array indexed ``[v, u]`` (row, column)
with D = ceil(2C/g). Column u grows with +x, row v grows with -y, and cell
(u=0, v=0) has its corner at (x=-C, y=+C). The sensor origin sits at the
continuous pixel coordinate (C/g - 0.5, C/g - 0.5).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .pointcloud import PointCloud


class EmptyWindowError(ValueError):
    def __init__(self, msg: str = "empty BV window"):
        super().__init__(msg)


def grid_size(g: float, C: float) -> int:
    if not (g > 0 and C > 0):
        raise ValueError(f"g and C must be positive (g={g}, C={C})")
    # round first so 2C/g = 250.00000000000003 does not become 251
    return int(math.ceil(round(2.0 * C / g, 9)))


def image_center(g: float, C: float) -> float:
    """Continuous pixel coordinate of the sensor origin along u and v."""
    return C / g - 0.5


@dataclass(frozen=True, eq=False)
class DensityGrid:
    counts: np.ndarray  # int64 [v, u]
    nm: int  # 0 when the window is empty
    g: float
    C: float


@dataclass(frozen=True, eq=False)
class BvImage:
    intensity: np.ndarray  # float64 [v, u], values in [0, 1]
    g: float
    C: float

    @property
    def size(self) -> int:
        return self.intensity.shape[0]

    @property
    def center(self) -> float:
        return image_center(self.g, self.C)


def cell_indices(xy: np.ndarray, g: float, C: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Map metric (x, y) to (u, v) cells. Returns ``(u, v, inside)``; the
    index arrays only cover the points flagged inside."""
    D = grid_size(g, C)
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    inside = (np.abs(xy[:, 0]) <= C) & (np.abs(xy[:, 1]) <= C)
    sel = xy[inside]
    # +C boundary lands in the last cell
    u = np.minimum(np.floor((sel[:, 0] + C) / g).astype(np.int64), D - 1)
    v = np.minimum(np.floor((C - sel[:, 1]) / g).astype(np.int64), D - 1)
    return u, v, inside


def density_grid(cloud: PointCloud, g: float, C: float) -> DensityGrid:
    """Count points per ground cell; z is ignored, points outside |x|,|y| <= C dropped."""
    D = grid_size(g, C)
    u, v, _ = cell_indices(cloud.xy, g, C)
    counts = np.bincount(v * D + u, minlength=D * D).reshape(D, D).astype(np.int64)
    nm = percentile99(counts) if counts.any() else 0
    return DensityGrid(counts, nm, g, C)


def percentile99(counts) -> int:
    """Nearest-rank 99th percentile over the occupied (non-zero) cells."""
    if isinstance(counts, DensityGrid):
        counts = counts.counts
    occ = np.sort(np.asarray(counts)[np.asarray(counts) > 0], axis=None)
    if occ.size == 0:
        raise EmptyWindowError()
    rank = math.ceil(0.99 * occ.size)
    return int(occ[rank - 1])


def build_bv_image(cloud: PointCloud, g: float = 0.4, C: float = 50.0) -> BvImage:
    grid = density_grid(cloud, g, C)
    if grid.nm == 0:
        raise EmptyWindowError()
    nm = float(grid.nm)
    return BvImage(np.minimum(grid.counts, nm) / nm, g, C)


# ---------------------------------------------------------------- export


def to_bytes(values: np.ndarray) -> np.ndarray:
    """Scale [0, 1] to 0..255, rounding half up."""
    return np.clip(np.floor(np.asarray(values, dtype=np.float64) * 255.0 + 0.5), 0, 255).astype(np.uint8)


def write_pgm(gray: np.ndarray, path) -> None:
    gray = np.ascontiguousarray(gray, dtype=np.uint8)
    h, w = gray.shape
    with Path(path).open("wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(gray.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval > 255:
        raise ValueError(f"{path}: 16-bit PGM not supported")
    pos += 1
    return np.frombuffer(data[pos:pos + w * h], dtype=np.uint8).reshape(h, w)


def render_pgm(image: BvImage, path) -> None:
    write_pgm(to_bytes(image.intensity), path)


def write_csv(image: BvImage, path) -> None:
    np.savetxt(path, image.intensity, fmt="%.6g", delimiter=",")


# ---------------------------------------------------------------- resampling


def unrotate_nearest(arr: np.ndarray, theta: float, center: float, fill=0) -> np.ndarray:
    """Undo a world rotation on a raster.

    ``arr`` is a grid built from a cloud rotated by ``theta`` about z; the
    result is that grid resampled (nearest neighbour) onto the unrotated
    frame's pixels. Samples falling outside ``arr`` get ``fill``.
    """
    h, w = arr.shape
    vv, uu = np.mgrid[0:h, 0:w].astype(np.float64)
    du, dv = uu - center, vv - center
    c, s = math.cos(theta), math.sin(theta)
    su = np.floor(c * du + s * dv + center + 0.5).astype(np.int64)
    sv = np.floor(-s * du + c * dv + center + 0.5).astype(np.int64)
    ok = (su >= 0) & (su < w) & (sv >= 0) & (sv < h)
    out = np.full(arr.shape, fill, dtype=arr.dtype)
    out[ok] = arr[sv[ok], su[ok]]
    return out
