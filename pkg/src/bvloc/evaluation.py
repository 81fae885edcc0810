"""Top-N recall and relative pose errors."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .pointcloud import Pose2D
from .retrieval import KeyframeDb, query


@dataclass(frozen=True)
class RecallCurve:
    recall: tuple[float, ...]  # recall[n-1] = recall@n
    threshold: float
    n_queries: int

    def at(self, n: int) -> float:
        if not 1 <= n <= len(self.recall):
            raise IndexError(f"recall@{n} outside 1..{len(self.recall)}")
        return self.recall[n - 1]

    def rows(self):
        return [(n + 1, r) for n, r in enumerate(self.recall)]


def first_hit_ranks(
    ranked_poses: Sequence[Sequence[Pose2D]], truths: Sequence[Pose2D], t: float
) -> np.ndarray:
    """1-based rank of the first retrieved pose within ``t`` meters; 0 if none."""
    out = np.zeros(len(truths), dtype=np.int64)
    for q, (cands, truth) in enumerate(zip(ranked_poses, truths)):
        for k, p in enumerate(cands, start=1):
            if math.hypot(p.tx - truth.tx, p.ty - truth.ty) < t:
                out[q] = k
                break
    return out


def recall_from_ranks(ranks: np.ndarray, n_max: int, t: float) -> RecallCurve:
    ranks = np.asarray(ranks)
    hit = ranks > 0
    curve = tuple(float(np.mean(hit & (ranks <= n))) for n in range(1, n_max + 1))
    return RecallCurve(curve, t, len(ranks))


def eval_recall(
    db: KeyframeDb, queries: Sequence[tuple[np.ndarray, Pose2D]], t: float = 25.0, n_max: int = 25
) -> RecallCurve:
    """A query succeeds at rank n when one of its top-n keyframes lies within
    ``t`` meters (planar) of the query's true pose."""
    if len(db) == 0 or len(queries) == 0:
        raise ValueError("empty database or query list")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    poses = {e.frame_id: e.pose for e in db.entries}
    ranked = [[poses[fid] for fid, _ in query(db, q, n_max)] for q, _ in queries]
    ranks = first_hit_ranks(ranked, [p for _, p in queries], t)
    return recall_from_ranks(ranks, n_max, t)


# ---------------------------------------------------------------- pose errors

SUCCESS_RTE = 2.0  # meters
SUCCESS_RRE = 5.0  # degrees


def relative_errors(estimate: Pose2D, truth: Pose2D) -> tuple[float, float]:
    """(RTE meters, RRE degrees) of truth^-1 * estimate."""
    rel = truth.inverse() * estimate
    return rel.translation_norm(), abs(math.degrees(rel.theta))


@dataclass(frozen=True)
class PoseErrorReport:
    rte: np.ndarray
    rre: np.ndarray
    success: np.ndarray

    @property
    def success_rate(self) -> float:
        return float(self.success.mean()) if self.success.size else 0.0

    def _stat(self, arr, fn) -> float:
        sel = arr[self.success]
        return float(fn(sel)) if sel.size else math.nan

    @property
    def mean_rte(self) -> float:
        return self._stat(self.rte, np.mean)

    @property
    def std_rte(self) -> float:
        return self._stat(self.rte, np.std)

    @property
    def mean_rre(self) -> float:
        return self._stat(self.rre, np.mean)

    @property
    def std_rre(self) -> float:
        return self._stat(self.rre, np.std)


def eval_pose(
    estimates: Sequence[Pose2D],
    truths: Sequence[Pose2D],
    max_rte: float = SUCCESS_RTE,
    max_rre: float = SUCCESS_RRE,
) -> PoseErrorReport:
    if len(estimates) != len(truths):
        raise ValueError(f"{len(estimates)} estimates but {len(truths)} ground-truth poses")
    errs = np.array([relative_errors(e, t) for e, t in zip(estimates, truths)]).reshape(-1, 2)
    rte, rre = errs[:, 0], errs[:, 1]
    return PoseErrorReport(rte, rre, (rte < max_rte) & (rre < max_rre))
