"""FAST keypoints on BV images and rotation-invariant MIM patch descriptors.

A patch is the J x J block of sample offsets ``d = i - (J-1)/2`` around a
keypoint (u, v), so with J = 96 the unrotated patch spans columns
u-47 .. u+48. Sample positions are rounded half-up to the nearest pixel.
Patch entries of -1 mark invalid samples (outside the image, or below the
MIM noise floor).
"""
from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import ndimage

from .loggabor import FilterBank, Mim, mim_from_image

INVALID = -1
PRIMARY, PI_FLIPPED = 0, 1

# Bresenham circle of radius 3, clockwise from 12 o'clock, as (du, dv)
CIRCLE16 = (
    (0, -3), (1, -3), (2, -2), (3, -1), (3, 0), (3, 1), (2, 2), (1, 3),
    (0, 3), (-1, 3), (-2, 2), (-3, 1), (-3, 0), (-3, -1), (-2, -2), (-1, -3),
)


@dataclass(frozen=True)
class Keypoint:
    u: int
    v: int
    score: float = 0.0


@dataclass(frozen=True)
class BvftConfig:
    patch_size: int = 96  # J
    n_grid: int = 6  # l
    fast_threshold: float = 0.06
    max_keypoints: int = 500
    arc_length: int = 9
    noise_floor: float | None = None  # None -> 1e-4 * mean(amp_max)

    def __post_init__(self):
        if self.patch_size % self.n_grid:
            raise ValueError("patch_size must be divisible by n_grid")
        if not 0 < self.fast_threshold < 1:
            raise ValueError("fast_threshold must lie in (0, 1)")


# ---------------------------------------------------------------- FAST


def segment_test(img: np.ndarray, threshold: float, arc: int = 9) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised FAST segment test.

    Returns ``(is_corner, score)`` over the full image; the 3-pixel border is
    never a corner. The score is the larger of the bright and dark sums of
    ``|I_k - I_p| - threshold`` over circle pixels beyond the threshold.
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    corner = np.zeros((h, w), dtype=bool)
    score = np.zeros((h, w))
    if h < 7 or w < 7:
        return corner, score
    c = img[3:h - 3, 3:w - 3]
    ring = np.stack([img[3 + dv:h - 3 + dv, 3 + du:w - 3 + du] for du, dv in CIRCLE16])
    bright = ring > c + threshold
    dark = ring < c - threshold
    hit = np.zeros(c.shape, dtype=bool)
    for mask in (bright, dark):
        wrapped = np.concatenate([mask, mask[: arc - 1]])
        run = np.ones(c.shape, dtype=bool)
        for start in range(16):
            run = wrapped[start:start + arc].all(axis=0)
            hit |= run
    sb = np.where(bright, ring - c - threshold, 0.0).sum(axis=0)
    sd = np.where(dark, c - ring - threshold, 0.0).sum(axis=0)
    corner[3:h - 3, 3:w - 3] = hit
    score[3:h - 3, 3:w - 3] = np.where(hit, np.maximum(sb, sd), 0.0)
    return corner, score


def patch_bounds(patch_size: int) -> tuple[int, int]:
    """Offsets (lo, hi) covered by an unrotated patch: u+lo .. u+hi."""
    lo = math.floor(-(patch_size - 1) / 2 + 0.5)
    return lo, lo + patch_size - 1


def detect_fast(
    image,
    threshold: float = 0.06,
    max_keypoints: int = 500,
    patch_size: int = 96,
    arc: int = 9,
) -> list[Keypoint]:
    """FAST-9 corners with 3x3 non-maximum suppression.

    Keypoints whose unrotated patch would leave the image are dropped before
    the top-``max_keypoints`` cut. Ordering: score descending, then (v, u).
    """
    img = np.asarray(getattr(image, "intensity", image), dtype=np.float64)
    corner, score = segment_test(img, threshold, arc)
    peak = corner & (score >= ndimage.maximum_filter(score, size=3, mode="constant"))
    lo, hi = patch_bounds(patch_size)
    h, w = img.shape
    border = np.zeros_like(peak)
    if h - hi > -lo and w - hi > -lo:
        border[-lo:h - hi, -lo:w - hi] = True
    vs, us = np.nonzero(peak & border)
    s = score[vs, us]
    order = np.lexsort((us, vs, -s))[:max_keypoints]
    return [Keypoint(int(us[i]), int(vs[i]), float(s[i])) for i in order]


# ---------------------------------------------------------------- patches


@lru_cache(maxsize=32)
def _offsets(patch_size: int) -> np.ndarray:
    return np.arange(patch_size) - (patch_size - 1) / 2.0


@lru_cache(maxsize=32)
def _gaussian_window(patch_size: int) -> np.ndarray:
    d = _offsets(patch_size)
    sigma = patch_size / 2.0
    g1 = np.exp(-(d**2) / (2 * sigma**2))
    return np.outer(g1, g1)


@lru_cache(maxsize=64)
def _rotated_offsets(patch_size: int, beta: float) -> tuple[np.ndarray, np.ndarray]:
    """Integer (du, dv) sample offsets of the patch rotated by ``beta``.

    Output pixel at offset d with polar angle t samples the source at angle
    t + beta (angles in image coordinates, v down).
    """
    d = _offsets(patch_size)
    dv, du = np.meshgrid(d, d, indexing="ij")
    c, s = math.cos(beta), math.sin(beta)
    su = np.floor(c * du - s * dv + 0.5).astype(np.int64)
    sv = np.floor(s * du + c * dv + 0.5).astype(np.int64)
    return su, sv


def _gather(mim: Mim, us: np.ndarray, vs: np.ndarray, su: np.ndarray, sv: np.ndarray) -> np.ndarray:
    """Sample MIM labels at keypoints + offsets; -1 where invalid. Shapes broadcast
    to (K, J, J)."""
    h, w = mim.index.shape
    uu = us[:, None, None] + su[None]
    vv = vs[:, None, None] + sv[None]
    inside = (uu >= 0) & (uu < w) & (vv >= 0) & (vv < h)
    uc = np.clip(uu, 0, w - 1)
    vc = np.clip(vv, 0, h - 1)
    lab = np.where(mim.valid[vc, uc] & inside, mim.index[vc, uc], INVALID)
    return lab


def crop_patch(mim: Mim, kp: Keypoint, patch_size: int = 96) -> np.ndarray:
    su, sv = _rotated_offsets(patch_size, 0.0)
    return _gather(mim, np.array([kp.u]), np.array([kp.v]), su, sv)[0]


def orientation_histogram(patch: np.ndarray, n_orient: int) -> np.ndarray:
    """Gaussian-weighted label histogram of a patch (sigma = J/2 per axis)."""
    patch = np.asarray(patch)
    w = _gaussian_window(patch.shape[-1])
    hist = np.empty(patch.shape[:-2] + (n_orient,))
    for o in range(n_orient):
        hist[..., o] = ((patch == o) * w).sum(axis=(-2, -1))
    return hist


def dominant_orientation(mim: Mim, kp: Keypoint, patch_size: int = 96, n_orient: int | None = None) -> tuple[int, float]:
    """Return ``(o_m, beta)`` with beta = pi * o_m / No; ties pick the smallest label."""
    n_orient = n_orient or mim.n_orient
    patch = crop_patch(mim, kp, patch_size)
    if not (patch != INVALID).any():
        raise ValueError(f"no valid MIM pixels around keypoint ({kp.u}, {kp.v})")
    o_m = int(np.argmax(orientation_histogram(patch, n_orient)))
    return o_m, math.pi * o_m / n_orient


def shift_patch(mim: Mim, kp: Keypoint, o_m: int, beta: float, patch_size: int = 96) -> np.ndarray:
    """Rotate the sampling grid by ``beta`` (nearest neighbour), then shift labels by -o_m mod No."""
    su, sv = _rotated_offsets(patch_size, beta)
    lab = _gather(mim, np.array([kp.u]), np.array([kp.v]), su, sv)[0]
    return np.where(lab == INVALID, INVALID, np.mod(lab - o_m, mim.n_orient))


def subgrid_counts(patch: np.ndarray, n_grid: int, n_orient: int) -> np.ndarray:
    """Per-sub-grid label counts, (..., l*l*No), sub-grid-major row-major order."""
    patch = np.asarray(patch)
    J = patch.shape[-1]
    if J % n_grid:
        raise ValueError("patch size must be divisible by the grid count")
    cell = J // n_grid
    lead = patch.shape[:-2]
    blocks = patch.reshape(lead + (n_grid, cell, n_grid, cell))
    out = np.empty(lead + (n_grid, n_grid, n_orient))
    for o in range(n_orient):
        out[..., o] = (blocks == o).sum(axis=(-3, -1))
    return out.reshape(lead + (n_grid * n_grid * n_orient,))


def build_descriptor(patch: np.ndarray, n_grid: int = 6, n_orient: int = 6) -> np.ndarray:
    """L2-normalised sub-grid label histogram of a shifted patch."""
    counts = subgrid_counts(patch, n_grid, n_orient)
    norm = np.linalg.norm(counts)
    if norm == 0:
        raise ValueError("patch has no valid pixels")
    return counts / norm


# ---------------------------------------------------------------- frames


@dataclass(frozen=True)
class Descriptor:
    vector: np.ndarray
    keypoint: Keypoint
    variant: int
    dominant_orientation: float


@dataclass(frozen=True, eq=False)
class DescriptorSet:
    """Descriptors of one frame, stored as arrays.

    Row ``2i`` is the primary descriptor of keypoint ``i`` and row ``2i+1``
    its pi-flipped twin.
    """

    frame_id: str
    keypoints: np.ndarray  # (K, 2) int, columns (u, v)
    scores: np.ndarray  # (K,)
    vectors: np.ndarray  # (2K, dim) float32
    orientations: np.ndarray  # (2K,) radians

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def n_keypoints(self) -> int:
        return self.keypoints.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def variants(self) -> np.ndarray:
        return np.tile(np.array([PRIMARY, PI_FLIPPED], dtype=np.uint8), self.n_keypoints)

    def positions(self) -> np.ndarray:
        """(2K, 2) pixel position of every descriptor row."""
        return np.repeat(self.keypoints, 2, axis=0)

    def __getitem__(self, i: int) -> Descriptor:
        k = i // 2
        kp = Keypoint(int(self.keypoints[k, 0]), int(self.keypoints[k, 1]), float(self.scores[k]))
        return Descriptor(self.vectors[i], kp, i % 2, float(self.orientations[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @classmethod
    def empty(cls, frame_id: str = "", dim: int = 216) -> DescriptorSet:
        return cls(frame_id, np.zeros((0, 2), np.int64), np.zeros(0), np.zeros((0, dim), np.float32), np.zeros(0))


def _padded_labels(mim: Mim, pad: int) -> np.ndarray:
    lab = np.where(mim.valid, mim.index, INVALID).astype(np.int8)
    return np.pad(lab, pad, constant_values=INVALID)


@lru_cache(maxsize=64)
def _flat_offsets(patch_size: int, beta: float, row: int) -> np.ndarray:
    su, sv = _rotated_offsets(patch_size, beta)
    return (sv * row + su).ravel()


@lru_cache(maxsize=8)
def _cell_ids(patch_size: int, n_grid: int) -> np.ndarray:
    c = np.arange(patch_size) // (patch_size // n_grid)
    return (c[:, None] * n_grid + c[None, :]).ravel()


def describe_keypoints(mim: Mim, keypoints: list[Keypoint], config: BvftConfig, frame_id: str = "") -> DescriptorSet:
    """Batched dominant orientation, patch shift and histogram for all keypoints.

    Same result as running dominant_orientation, shift_patch and
    build_descriptor per keypoint, computed with flat gathers and bincounts.
    Keypoints without a single valid patch pixel are dropped.
    """
    no, J, l = mim.n_orient, config.patch_size, config.n_grid
    dim = l * l * no
    if not keypoints:
        return DescriptorSet.empty(frame_id, dim)
    us = np.array([k.u for k in keypoints], dtype=np.int64)
    vs = np.array([k.v for k in keypoints], dtype=np.int64)
    scores = np.array([k.score for k in keypoints])
    K = len(keypoints)

    pad = int(math.ceil(J * math.sqrt(0.5))) + 2
    flat = _padded_labels(mim, pad)
    row = flat.shape[1]
    flat = flat.ravel()
    # keypoints whose rotated patch could leave the padded image are sampled
    # through the slow clipped path
    h, w = mim.index.shape
    reach = pad - 2
    safe = (us - reach >= -pad + 1) & (us + reach < w + pad - 1) & (vs - reach >= -pad + 1) & (vs + reach < h + pad - 1)
    base = (vs + pad) * row + (us + pad)

    def sample(sel: np.ndarray, beta: float) -> np.ndarray:
        out = np.empty((sel.size, J * J), dtype=np.int8)
        fast = safe[sel]
        if fast.any():
            off = _flat_offsets(J, beta, row)
            out[fast] = flat[base[sel[fast], None] + off[None]]
        if (~fast).any():
            su, sv = _rotated_offsets(J, beta)
            slow = sel[~fast]
            out[~fast] = _gather(mim, us[slow], vs[slow], su, sv).reshape(slow.size, -1)
        return out

    raw = sample(np.arange(K), 0.0)
    valid = raw != INVALID
    alive = valid.any(axis=1)
    gw = _gaussian_window(J).ravel()
    kk = np.broadcast_to(np.arange(K)[:, None], raw.shape)
    hist = np.bincount(
        (kk * no + raw)[valid], weights=np.broadcast_to(gw, raw.shape)[valid], minlength=K * no
    ).reshape(K, no)
    o_m = np.argmax(hist, axis=1)

    cells = _cell_ids(J, l)
    counts = np.zeros((K, l * l * no))
    for o in np.unique(o_m[alive]):
        sel = np.nonzero(alive & (o_m == o))[0]
        lab = sample(sel, math.pi * int(o) / no).astype(np.int64)
        ok = lab != INVALID
        code = (np.arange(sel.size)[:, None] * (l * l) + cells[None]) * no + np.mod(lab - o, no)
        counts[sel] = np.bincount(code[ok], minlength=sel.size * l * l * no).reshape(sel.size, -1)
    # pi twin: turning the shifted patch half a revolution maps sub-grid c
    # onto l*l-1-c and leaves the labels alone
    twin = counts.reshape(K, l * l, no)[:, ::-1, :].reshape(K, -1)
    norm = np.linalg.norm(counts, axis=1)
    keep = alive & (norm > 0)
    idx = np.nonzero(keep)[0]
    vecs = np.empty((2 * idx.size, dim))
    vecs[0::2] = counts[idx] / norm[idx, None]
    vecs[1::2] = twin[idx] / norm[idx, None]
    beta = math.pi * o_m[idx] / no
    ori = np.repeat(beta, 2)
    ori[1::2] += math.pi
    kps = np.column_stack([us[idx], vs[idx]]).astype(np.int64)
    return DescriptorSet(frame_id, kps, scores[idx], vecs.astype(np.float32), ori)


def describe_frame(image, bank: FilterBank, config: BvftConfig | None = None, frame_id: str = "") -> DescriptorSet:
    """Detect, build the MIM, and describe every surviving keypoint twice."""
    config = config or BvftConfig()
    img = np.asarray(getattr(image, "intensity", image), dtype=np.float64)
    no = bank.params.n_orient
    if not img.any():
        return DescriptorSet.empty(frame_id, config.n_grid**2 * no)
    kps = detect_fast(img, config.fast_threshold, config.max_keypoints, config.patch_size, config.arc_length)
    if not kps:
        return DescriptorSet.empty(frame_id, config.n_grid**2 * no)
    mim = mim_from_image(img, bank, config.noise_floor)
    return describe_keypoints(mim, kps, config, frame_id)


# ---------------------------------------------------------------- serialisation

BVFT_MAGIC = b"BVFT"
BVFT_VERSION = 1


class DescriptorFormatError(ValueError):
    pass


def write_descriptor_set(ds: DescriptorSet, fh) -> None:
    """magic, u16 version, u16 dim, u32 keypoint count, then per descriptor:
    u16 u, u16 v, u8 variant, dim x f32 (all little-endian)."""
    fh.write(BVFT_MAGIC)
    fh.write(struct.pack("<HHI", BVFT_VERSION, ds.dim, ds.n_keypoints))
    rec = np.dtype([("u", "<u2"), ("v", "<u2"), ("variant", "u1"), ("vec", "<f4", (ds.dim,))])
    arr = np.zeros(len(ds), dtype=rec)
    pos = ds.positions()
    arr["u"], arr["v"] = pos[:, 0], pos[:, 1]
    arr["variant"] = ds.variants
    arr["vec"] = ds.vectors
    fh.write(arr.tobytes())


def read_descriptor_set(fh, frame_id: str = "") -> DescriptorSet:
    head = fh.read(12)
    if len(head) < 12:
        raise DescriptorFormatError("truncated descriptor record header")
    if head[:4] != BVFT_MAGIC:
        raise DescriptorFormatError("not a BVFT record")
    version, dim, nkp = struct.unpack("<HHI", head[4:])
    if version != BVFT_VERSION:
        raise DescriptorFormatError(f"unsupported BVFT version {version}")
    rec = np.dtype([("u", "<u2"), ("v", "<u2"), ("variant", "u1"), ("vec", "<f4", (dim,))])
    body = fh.read(rec.itemsize * 2 * nkp)
    if len(body) < rec.itemsize * 2 * nkp:
        raise DescriptorFormatError("truncated descriptor record")
    arr = np.frombuffer(body, dtype=rec)
    kps = np.column_stack([arr["u"][0::2], arr["v"][0::2]]).astype(np.int64)
    vecs = np.array(arr["vec"], dtype=np.float32).reshape(-1, dim)
    return DescriptorSet(frame_id, kps, np.zeros(nkp), vecs, np.zeros(2 * nkp))


def save_descriptor_set(ds: DescriptorSet, path) -> None:
    with open(path, "wb") as fh:
        write_descriptor_set(ds, fh)


def load_descriptor_set(path, frame_id: str = "") -> DescriptorSet:
    with open(path, "rb") as fh:
        return read_descriptor_set(fh, frame_id)


def descriptor_set_bytes(ds: DescriptorSet) -> bytes:
    buf = io.BytesIO()
    write_descriptor_set(ds, buf)
    return buf.getvalue()
