"""Top-N recall on a synthetic street: keyframe database vs rotated revisits.

Keyframes are scans every 10 m along the street. Queries are independent
scans of the same places yawed by a random multiple of 30 deg (or any yaw
with ``--any-yaw``) and laterally offset by up to ``--offset`` meters.

    python scripts/retrieval_benchmark.py --frames 100 --words 200
"""
import argparse
import math
import time

import numpy as np

from bvloc.config import Config
from bvloc.evaluation import eval_recall
from bvloc.pipeline import describe_cloud
from bvloc.pointcloud import PointCloud, Pose2D, transform_cloud
from bvloc.retrieval import build_database
from bvloc.synth import StreetSpec, sample_world, street_trajectory, street_world


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--frames", type=int, default=100)
    ap.add_argument("--words", type=int, default=200)
    ap.add_argument("--seed", type=int, default=5)
    ap.add_argument("--offset", type=float, default=0.0, help="max query displacement in meters")
    ap.add_argument("--any-yaw", action="store_true")
    ap.add_argument("--t", type=float, default=25.0)
    ap.add_argument("--n-max", type=int, default=25)
    args = ap.parse_args()

    cfg = Config()
    spec = StreetSpec(length=10.0 * (args.frames - 1) + 1)
    world = street_world(args.seed, spec)
    traj = street_trajectory(spec.length, 10.0, seed=args.seed)[: args.frames]

    def scan(pose, sample_seed, fid):
        pts = sample_world(np.random.default_rng(sample_seed), world, spec.scene, sensor=pose, max_range=70)
        return PointCloud(pts, fid, pose)

    t0 = time.perf_counter()
    db = build_database(
        (scan(p, i, f"kf{i:04d}") for i, p in enumerate(traj)),
        lambda c: describe_cloud(c, cfg),
        10.0,
        b=args.words,
        seed=0,
    )
    t_build = time.perf_counter() - t0

    rng = np.random.default_rng(args.seed + 1)
    queries = []
    for i, p in enumerate(traj):
        dx, dy = rng.uniform(-args.offset, args.offset, 2)
        at = Pose2D(p.tx + dx, p.ty + dy, p.theta)
        yaw = rng.uniform(-math.pi, math.pi) if args.any_yaw else int(rng.integers(0, 6)) * math.pi / 6
        c = transform_cloud(scan(at, 10_000 + i, f"q{i:04d}"), Pose2D(0, 0, yaw))
        queries.append((db.describe_query(describe_cloud(c, cfg)), at))
    curve = eval_recall(db, queries, args.t, args.n_max)
    t_all = time.perf_counter() - t0
    print("n,recall")
    for n, r in curve.rows():
        print(f"{n},{r:.4f}")
    print(f"# {len(db)} keyframes, b={db.b}, build {t_build:.0f} s, total {t_all:.0f} s")


if __name__ == "__main__":
    main()
