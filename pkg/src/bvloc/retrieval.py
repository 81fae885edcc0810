"""Bag-of-words place recognition over BVFT descriptors.

k-means dictionary, word histograms, TF-IDF global descriptors and a
keyframe database with a binary on-disk format (BVDB).
"""
from __future__ import annotations

import io
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .bvft import DescriptorFormatError, DescriptorSet, read_descriptor_set, write_descriptor_set
from .pointcloud import PointCloud, Pose2D

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- dictionary


@dataclass(frozen=True, eq=False)
class Dictionary:
    centroids: np.ndarray  # (b, dim) float32
    iterations: int = 0
    inertia: float = 0.0

    def __post_init__(self):
        c = np.ascontiguousarray(self.centroids, dtype=np.float32)
        if c.ndim != 2 or c.shape[0] == 0:
            raise ValueError("dictionary needs a non-empty (b, dim) centroid matrix")
        if not np.isfinite(c).all():
            raise ValueError("dictionary centroids contain NaN or inf")
        c.setflags(write=False)
        object.__setattr__(self, "centroids", c)

    @property
    def b(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = (x * x).sum(1)[:, None] - 2.0 * x @ c.T + (c * c).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _assign(x: np.ndarray, c: np.ndarray, chunk: int = 8192) -> tuple[np.ndarray, np.ndarray]:
    """Nearest centroid per row (ties -> smallest index) and its squared distance."""
    lab = np.empty(len(x), dtype=np.int64)
    dist = np.empty(len(x))
    for s in range(0, len(x), chunk):
        d = _sq_dists(x[s:s + chunk], c)
        lab[s:s + chunk] = np.argmin(d, axis=1)
        dist[s:s + chunk] = d[np.arange(len(d)), lab[s:s + chunk]]
    return lab, dist


def kmeans_plus_plus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = _sq_dists(x, centers[:1])[:, 0]
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            # fewer distinct points than k: duplicates are unavoidable
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.uniform(0, total), side="right"))
            idx = min(idx, n - 1)
        centers[i] = x[idx]
        d2 = np.minimum(d2, _sq_dists(x, centers[i:i + 1])[:, 0])
    return centers


def train_dictionary(
    descriptors: np.ndarray,
    b: int,
    max_iter: int = 50,
    seed: int = 0,
    tol: float = 1e-4,
    history: list | None = None,
) -> Dictionary:
    """k-means++ seeded Lloyd iterations.

    Stops when the largest centroid shift drops below ``tol`` or after
    ``max_iter`` iterations. An emptied cluster is re-seeded at the point
    farthest from its current centroid. If ``history`` is given the inertia
    after every assignment step is appended to it.
    """
    x = np.asarray(descriptors, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("descriptors must be a 2D matrix")
    if len(x) < b:
        raise ValueError(f"need at least b={b} descriptors, got {len(x)}")
    if b < 1:
        raise ValueError("b must be >= 1")
    rng = np.random.default_rng(seed)
    c = kmeans_plus_plus(x, b, rng)
    lab, dist = _assign(x, c)
    it = 0
    for it in range(1, max_iter + 1):
        new = np.zeros_like(c)
        np.add.at(new, lab, x)
        counts = np.bincount(lab, minlength=b)
        taken = np.zeros(len(x), dtype=bool)
        for j in np.nonzero(counts == 0)[0]:
            far = np.where(taken, -1.0, dist)
            i = int(np.argmax(far))
            new[j] = x[i]
            counts[j] = 1
            taken[i] = True
            dist[i] = 0.0
        nz = counts > 0
        new[nz] /= counts[nz, None]
        shift = float(np.sqrt(((new - c) ** 2).sum(axis=1)).max())
        c = new
        lab, dist = _assign(x, c)
        if history is not None:
            history.append(float(dist.sum()))
        if shift < tol:
            break
    return Dictionary(c.astype(np.float32), it, float(dist.sum()))


def quantize(ds: DescriptorSet | np.ndarray, dictionary: Dictionary) -> np.ndarray:
    """Word-count histogram (int64, length b) of every descriptor row."""
    vecs = ds.vectors if isinstance(ds, DescriptorSet) else np.asarray(ds)
    if vecs.size == 0:
        return np.zeros(dictionary.b, dtype=np.int64)
    if vecs.ndim != 2 or vecs.shape[1] != dictionary.dim:
        raise ValueError(f"descriptor dimension {vecs.shape[-1]} does not match dictionary {dictionary.dim}")
    lab, _ = _assign(vecs.astype(np.float64), dictionary.centroids.astype(np.float64))
    return np.bincount(lab, minlength=dictionary.b).astype(np.int64)


def compute_idf(corpus) -> np.ndarray:
    """ln(N / n_w); words no document uses get 0."""
    h = np.asarray(corpus)
    if h.ndim != 2 or h.shape[0] == 0:
        raise ValueError("empty corpus")
    n = h.shape[0]
    df = (h > 0).sum(axis=0)
    idf = np.zeros(h.shape[1])
    used = df > 0
    idf[used] = np.log(n / df[used])
    return idf


def global_descriptor(hist, idf) -> np.ndarray:
    hist = np.asarray(hist, dtype=np.float64)
    idf = np.asarray(idf, dtype=np.float64)
    if hist.shape != idf.shape:
        raise ValueError(f"histogram length {hist.shape} does not match idf {idf.shape}")
    total = hist.sum()
    if total == 0:
        return np.zeros_like(hist)
    w = hist / total * idf
    norm = np.linalg.norm(w)
    return w / norm if norm > 0 else w


# ---------------------------------------------------------------- database


@dataclass(frozen=True, eq=False)
class Keyframe:
    frame_id: str
    pose: Pose2D
    descriptor: np.ndarray  # global, length b
    local: DescriptorSet


@dataclass(eq=False)
class KeyframeDb:
    dictionary: Dictionary
    idf: np.ndarray
    entries: list[Keyframe] = field(default_factory=list)
    spacing: float = 10.0

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def b(self) -> int:
        return self.dictionary.b

    def matrix(self) -> np.ndarray:
        return np.stack([e.descriptor for e in self.entries]) if self.entries else np.zeros((0, self.b))

    def describe_query(self, local: DescriptorSet) -> np.ndarray:
        return global_descriptor(quantize(local, self.dictionary), self.idf)

    def query(self, q: np.ndarray, n: int = 1) -> list[tuple[str, float]]:
        return query(self, q, n)

    def same_as(self, other: KeyframeDb) -> bool:
        """Bit-exact comparison of dictionary, idf, spacing and every entry."""
        if not (
            np.array_equal(self.dictionary.centroids, other.dictionary.centroids)
            and np.array_equal(self.idf, other.idf)
            and self.spacing == other.spacing
            and len(self) == len(other)
        ):
            return False
        for a, b in zip(self.entries, other.entries):
            if a.frame_id != b.frame_id or a.pose != b.pose:
                return False
            if not np.array_equal(a.descriptor, b.descriptor):
                return False
            if not (
                np.array_equal(a.local.keypoints, b.local.keypoints)
                and np.array_equal(a.local.vectors, b.local.vectors)
            ):
                return False
        return True


def select_keyframes(poses: Iterable[Pose2D | None], spacing: float) -> list[int]:
    """Greedy selection: the first frame, then every frame at least
    ``spacing`` meters (planar) from the last selected one."""
    chosen: list[int] = []
    last = None
    for i, p in enumerate(poses):
        if p is None:
            raise ValueError(f"frame {i} has no pose")
        if last is None or math.hypot(p.tx - last.tx, p.ty - last.ty) >= spacing:
            chosen.append(i)
            last = p
    return chosen


def build_database(
    frames: Iterable[PointCloud],
    describe: Callable[[PointCloud], DescriptorSet],
    spacing: float = 10.0,
    b: int = 10000,
    dictionary: Dictionary | None = None,
    kmeans_iter: int = 50,
    seed: int = 0,
) -> KeyframeDb:
    """Select keyframes, describe them, train the dictionary if none is
    given, and weight every keyframe's word histogram by the corpus idf.

    ``frames`` is consumed lazily; frames that are not keyframes are never
    described.
    """
    kept: list[tuple[str, Pose2D, DescriptorSet]] = []
    last = None
    for i, fr in enumerate(frames):
        if fr.pose is None:
            raise ValueError(f"frame {i} ({fr.frame_id!r}) has no pose")
        p = fr.pose
        if last is not None and math.hypot(p.tx - last.tx, p.ty - last.ty) < spacing:
            continue
        last = p
        kept.append((fr.frame_id, p, describe(fr)))
    if not kept:
        raise ValueError("no frames given")
    if dictionary is None:
        stack = np.concatenate([ds.vectors for _, _, ds in kept])
        log.info("training %d-word dictionary on %d descriptors", b, len(stack))
        dictionary = train_dictionary(stack, b, kmeans_iter, seed)
    hists = np.stack([quantize(ds, dictionary) for _, _, ds in kept])
    idf = compute_idf(hists)
    entries = [
        Keyframe(fid, pose, global_descriptor(h, idf), ds) for (fid, pose, ds), h in zip(kept, hists)
    ]
    return KeyframeDb(dictionary, idf, entries, spacing)


def query(db: KeyframeDb, q, n: int = 1) -> list[tuple[str, float]]:
    """Top-n entries by Euclidean distance to ``q``; ties by frame_id."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if len(db) == 0:
        raise ValueError("empty database")
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (db.b,):
        raise ValueError(f"query length {q.shape} does not match b={db.b}")
    dist = np.linalg.norm(db.matrix() - q[None], axis=1)
    ids = [e.frame_id for e in db.entries]
    order = sorted(range(len(ids)), key=lambda i: (dist[i], ids[i]))
    return [(ids[i], float(dist[i])) for i in order[:n]]


# ---------------------------------------------------------------- BVDB I/O

BVDB_MAGIC = b"BVDB"
BVDB_VERSION = 1


class DatabaseFormatError(ValueError):
    pass


def save_db(db: KeyframeDb, path) -> None:
    """Little-endian layout: magic, u16 version, u32 b, u32 dim, f32
    centroids, f64 idf, f64 spacing, u32 count, then per entry a u32-length
    UTF-8 id, 3 x f64 pose, b x f64 global descriptor and a BVFT record."""
    buf = io.BytesIO()
    d = db.dictionary
    buf.write(BVDB_MAGIC)
    buf.write(struct.pack("<HII", BVDB_VERSION, d.b, d.dim))
    buf.write(d.centroids.astype("<f4").tobytes())
    buf.write(np.asarray(db.idf, dtype="<f8").tobytes())
    buf.write(struct.pack("<dI", db.spacing, len(db)))
    for e in db.entries:
        fid = e.frame_id.encode("utf-8")
        buf.write(struct.pack("<I", len(fid)))
        buf.write(fid)
        buf.write(struct.pack("<ddd", e.pose.tx, e.pose.ty, e.pose.theta))
        buf.write(np.asarray(e.descriptor, dtype="<f8").tobytes())
        write_descriptor_set(e.local, buf)
    Path(path).write_bytes(buf.getvalue())


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0
        self.entry: int | None = None

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            where = "header" if self.entry is None else f"entry {self.entry}"
            raise DatabaseFormatError(f"truncated database (in {where})")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_db(path) -> KeyframeDb:
    r = _Reader(Path(path).read_bytes())
    if len(r.data) < 4 or r.data[:4] != BVDB_MAGIC:
        raise DatabaseFormatError("not a BVDB file")
    r.take(4)
    version, b, dim = r.unpack("<HII")
    if version != BVDB_VERSION:
        raise DatabaseFormatError(f"unsupported BVDB version {version} (expected {BVDB_VERSION})")
    cent = np.frombuffer(r.take(4 * b * dim), dtype="<f4").reshape(b, dim)
    idf = np.frombuffer(r.take(8 * b), dtype="<f8").copy()
    spacing, count = r.unpack("<dI")
    entries = []
    for i in range(count):
        r.entry = i
        (n,) = r.unpack("<I")
        try:
            fid = r.take(n).decode("utf-8")
        except UnicodeDecodeError:
            raise DatabaseFormatError(f"entry {i}: frame id is not valid UTF-8") from None
        tx, ty, th = r.unpack("<ddd")
        g = np.frombuffer(r.take(8 * b), dtype="<f8").copy()
        sub = io.BytesIO(r.data[r.pos:])
        try:
            local = read_descriptor_set(sub, fid)
        except DescriptorFormatError as exc:
            if "truncated" in str(exc):
                raise DatabaseFormatError(f"truncated database (in entry {i})") from None
            raise DatabaseFormatError(f"entry {i}: {exc}") from None
        r.pos += sub.tell()
        entries.append(Keyframe(fid, Pose2D(tx, ty, th), g, local))
    return KeyframeDb(Dictionary(cent), idf, entries, spacing)
