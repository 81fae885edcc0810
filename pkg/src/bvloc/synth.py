"""Synthetic road-like scenes: vertical poles, planar facades and a ground disc.

Everything is driven by ``numpy.random.default_rng(seed)`` so a fixed seed
gives bit-identical clouds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .pointcloud import PointCloud, Pose2D


@dataclass(frozen=True)
class Pole:
    x: float
    y: float
    height: float = 8.0


@dataclass(frozen=True)
class Facade:
    x0: float
    y0: float
    x1: float
    y1: float
    height: float = 10.0

    @property
    def length(self) -> float:
        return math.hypot(self.x1 - self.x0, self.y1 - self.y0)


@dataclass(frozen=True)
class Shrub:
    """Vegetation-like blob: points scattered in a vertical cylinder."""

    x: float
    y: float
    radius: float = 1.5
    height: float = 2.0


@dataclass(frozen=True)
class SceneSpec:
    poles: tuple[Pole, ...] = ()
    facades: tuple[Facade, ...] = ()
    shrubs: tuple[Shrub, ...] = ()
    n_random_poles: int = 0
    n_random_facades: int = 0
    n_random_shrubs: int = 0
    extent: float = 40.0  # random structures stay within this radius
    ground_radius: float = 45.0  # 0 disables the ground
    ground_z: float = -1.8
    pole_density: float = 40.0  # points per meter of height
    shrub_density: float = 30.0  # points per cubic meter
    facade_density: float = 20.0  # points per square meter
    ground_spacing: float = 0.2  # jittered-grid pitch on the ground
    noise_sigma: float = 0.0
    outlier_fraction: float = 0.0
    outlier_extent: float = 50.0

    def __post_init__(self):
        if self.extent <= 0 and (self.n_random_poles or self.n_random_facades):
            raise ValueError("degenerate scene: zero extent")
        if self.ground_radius < 0 or self.ground_spacing <= 0:
            raise ValueError("degenerate scene: bad ground parameters")
        if min(self.pole_density, self.facade_density, self.shrub_density) <= 0:
            raise ValueError("degenerate scene: non-positive density")
        for f in self.facades:
            if f.length <= 0 or f.height <= 0:
                raise ValueError("degenerate scene: zero-extent facade")
        for p in self.poles:
            if p.height <= 0:
                raise ValueError("degenerate scene: zero-height pole")
        for b in self.shrubs:
            if b.radius <= 0 or b.height <= 0:
                raise ValueError("degenerate scene: zero-size shrub")
        if not 0 <= self.outlier_fraction < 1:
            raise ValueError("outlier_fraction must lie in [0, 1)")


@dataclass(frozen=True)
class World:
    """Fixed structures in a global frame."""

    poles: tuple[Pole, ...] = ()
    facades: tuple[Facade, ...] = ()
    shrubs: tuple[Shrub, ...] = ()


def random_world(rng: np.random.Generator, spec: SceneSpec, center=(0.0, 0.0)) -> World:
    cx, cy = center
    poles = list(spec.poles)
    for _ in range(spec.n_random_poles):
        r = spec.extent * math.sqrt(rng.uniform(0.02, 1.0))
        a = rng.uniform(-math.pi, math.pi)
        poles.append(Pole(cx + r * math.cos(a), cy + r * math.sin(a), rng.uniform(4.0, 10.0)))
    facades = list(spec.facades)
    for _ in range(spec.n_random_facades):
        length = rng.uniform(5.0, 20.0)
        r = (spec.extent - length / 2) * math.sqrt(rng.uniform(0.05, 1.0))
        a = rng.uniform(-math.pi, math.pi)
        mx, my = cx + r * math.cos(a), cy + r * math.sin(a)
        phi = rng.uniform(0, math.pi)
        dx, dy = 0.5 * length * math.cos(phi), 0.5 * length * math.sin(phi)
        facades.append(Facade(mx - dx, my - dy, mx + dx, my + dy, rng.uniform(5.0, 15.0)))
    shrubs = list(spec.shrubs)
    for _ in range(spec.n_random_shrubs):
        r = spec.extent * math.sqrt(rng.uniform(0.02, 1.0))
        a = rng.uniform(-math.pi, math.pi)
        shrubs.append(Shrub(cx + r * math.cos(a), cy + r * math.sin(a), rng.uniform(0.5, 3.0), rng.uniform(0.8, 4.0)))
    return World(tuple(poles), tuple(facades), tuple(shrubs))


def _pole_points(rng, pole: Pole, density: float, z0: float) -> np.ndarray:
    n = max(1, int(round(density * pole.height)))
    # stratified heights keep the per-meter count within +-1 of the nominal
    z = (np.arange(n) + rng.uniform(0, 1, n)) * (pole.height / n) + z0
    return np.column_stack([np.full(n, pole.x), np.full(n, pole.y), z])


def _facade_points(rng, f: Facade, density: float, z0: float) -> np.ndarray:
    # jittered grid over (length, height): full coverage without Poisson holes
    pitch = 1.0 / math.sqrt(density)
    nl = max(1, int(math.ceil(f.length / pitch)))
    nh = max(1, int(math.ceil(f.height / pitch)))
    il, ih = np.meshgrid(np.arange(nl), np.arange(nh), indexing="ij")
    t = (il.ravel() + rng.uniform(0, 1, il.size)) / nl
    z = (ih.ravel() + rng.uniform(0, 1, ih.size)) * (f.height / nh) + z0
    return np.column_stack([f.x0 + t * (f.x1 - f.x0), f.y0 + t * (f.y1 - f.y0), z])


def _shrub_points(rng, b: Shrub, density: float, z0: float) -> np.ndarray:
    n = max(1, int(round(density * math.pi * b.radius**2 * b.height)))
    r = b.radius * np.sqrt(rng.uniform(0, 1, n))
    a = rng.uniform(-math.pi, math.pi, n)
    # denser towards the bottom, like a crown thinning out
    z = z0 + b.height * rng.uniform(0, 1, n) ** 1.5
    return np.column_stack([b.x + r * np.cos(a), b.y + r * np.sin(a), z])


def _ground_points(rng, center, radius: float, pitch: float, z0: float) -> np.ndarray:
    cx, cy = center
    # jittered grid anchored to the world origin so overlapping scans share strata
    i0, i1 = math.floor((cx - radius) / pitch), math.ceil((cx + radius) / pitch)
    j0, j1 = math.floor((cy - radius) / pitch), math.ceil((cy + radius) / pitch)
    gx, gy = np.meshgrid(np.arange(i0, i1), np.arange(j0, j1), indexing="ij")
    x = (gx.ravel() + rng.uniform(0, 1, gx.size)) * pitch
    y = (gy.ravel() + rng.uniform(0, 1, gy.size)) * pitch
    keep = (x - cx) ** 2 + (y - cy) ** 2 <= radius**2
    return np.column_stack([x[keep], y[keep], np.full(int(keep.sum()), z0)])


def sample_world(
    rng: np.random.Generator,
    world: World,
    spec: SceneSpec,
    sensor: Pose2D | None = None,
    max_range: float | None = None,
) -> np.ndarray:
    """Sample points of ``world`` and express them in the frame of ``sensor``.

    ``sensor`` is the sensor pose in the world frame. Noise and outliers are
    added in the sensor frame.
    """
    sensor = sensor or Pose2D.identity()
    center = (sensor.tx, sensor.ty)
    reach = max_range if max_range is not None else math.inf

    chunks = []
    for p in world.poles:
        if math.hypot(p.x - center[0], p.y - center[1]) <= reach:
            chunks.append(_pole_points(rng, p, spec.pole_density, spec.ground_z))
    for f in world.facades:
        mx, my = (f.x0 + f.x1) / 2, (f.y0 + f.y1) / 2
        if math.hypot(mx - center[0], my - center[1]) <= reach + f.length / 2:
            chunks.append(_facade_points(rng, f, spec.facade_density, spec.ground_z))
    for b in world.shrubs:
        if math.hypot(b.x - center[0], b.y - center[1]) <= reach + b.radius:
            chunks.append(_shrub_points(rng, b, spec.shrub_density, spec.ground_z))
    if spec.ground_radius > 0:
        chunks.append(_ground_points(rng, center, spec.ground_radius, spec.ground_spacing, spec.ground_z))
    pts = np.concatenate(chunks) if chunks else np.empty((0, 3))

    inv = sensor.inverse()
    pts[:, :2] = inv.apply(pts[:, :2])
    if spec.noise_sigma > 0:
        pts = pts + rng.normal(0.0, spec.noise_sigma, pts.shape)
    if spec.outlier_fraction > 0 and len(pts):
        n_out = int(round(spec.outlier_fraction * len(pts)))
        idx = rng.choice(len(pts), n_out, replace=False)
        pts[idx] = rng.uniform(-spec.outlier_extent, spec.outlier_extent, (n_out, 3))
    return pts


DEFAULT_SCENE = SceneSpec(n_random_poles=40, n_random_facades=20, n_random_shrubs=40)


def synth_scene(seed: int, spec: SceneSpec | None = None, frame_id: str | None = None) -> PointCloud:
    """One synthetic scan around the origin."""
    spec = spec or DEFAULT_SCENE
    rng = np.random.default_rng(seed)
    world = random_world(rng, spec)
    pts = sample_world(rng, world, spec)
    return PointCloud(pts, frame_id if frame_id is not None else f"synth-{seed}")


def synth_pair(
    seed: int, pose: Pose2D, spec: SceneSpec | None = None
) -> tuple[PointCloud, PointCloud]:
    """Two independent scans of one world; ``b`` is ``a``'s world seen through ``pose``.

    ``transform_cloud(a, pose)`` aligns ``a`` with ``b`` up to sampling and noise.
    """
    spec = spec or DEFAULT_SCENE
    rng = np.random.default_rng(seed)
    world = random_world(rng, spec)
    a = sample_world(rng, world, spec)
    # b's sensor sits at pose^-1 in a's frame
    b = sample_world(rng, world, spec, sensor=pose.inverse())
    return PointCloud(a, f"synth-{seed}-a"), PointCloud(b, f"synth-{seed}-b")


@dataclass(frozen=True)
class StreetSpec:
    """A long straight street lined with facades and poles, driven along +x."""

    length: float = 2000.0
    half_width: float = 10.0
    pole_spacing: float = 12.0
    facade_gap: float = 4.0
    scene: SceneSpec = field(default_factory=SceneSpec)


def street_world(seed: int, spec: StreetSpec | None = None) -> World:
    spec = spec or StreetSpec()
    rng = np.random.default_rng(seed)
    poles, facades = [], []
    for side in (-1.0, 1.0):
        x = -60.0
        while x < spec.length + 60.0:
            seg = rng.uniform(6.0, 30.0)
            setback = spec.half_width + rng.uniform(1.0, 12.0)
            y = side * setback
            facades.append(Facade(x, y, x + seg, y, rng.uniform(5.0, 18.0)))
            # occasional side wall going back from the street
            if rng.uniform() < 0.5:
                depth = rng.uniform(4.0, 15.0)
                xe = x + seg if rng.uniform() < 0.5 else x
                facades.append(Facade(xe, y, xe, y + side * depth, rng.uniform(5.0, 18.0)))
            x += seg + rng.uniform(1.0, 3.0 * spec.facade_gap)
        x = -60.0
        while x < spec.length + 60.0:
            x += rng.uniform(0.4, 1.6) * spec.pole_spacing
            poles.append(Pole(x, side * (spec.half_width - rng.uniform(0.5, 2.5)), rng.uniform(4.0, 10.0)))
    # free-standing clutter
    for _ in range(int(spec.length / 8)):
        poles.append(
            Pole(rng.uniform(-60, spec.length + 60), rng.uniform(-35, 35), rng.uniform(3.0, 9.0))
        )
    return World(tuple(poles), tuple(facades))


def street_trajectory(length: float, step: float = 1.0, seed: int = 0, lateral: float = 1.5) -> list[Pose2D]:
    """Poses every ``step`` meters along the street with mild lateral wander."""
    rng = np.random.default_rng(seed)
    n = int(length / step) + 1
    xs = np.arange(n) * step
    ys = np.clip(np.cumsum(rng.normal(0, 0.1, n)), -lateral, lateral)
    headings = np.zeros(n)
    return [Pose2D(x, y, h) for x, y, h in zip(xs, ys, headings)]
