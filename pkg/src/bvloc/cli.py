"""Command-line entry point: ``bvloc <subcommand> ...``.

Exit status: 0 success, 1 usage error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bvft import load_descriptor_set, save_descriptor_set
from .bvimage import render_pgm, write_csv
from .config import Config, load_config, with_overrides
from .evaluation import eval_pose, eval_recall
from .pipeline import bv_image, describe_cloud, register_pair
from .pointcloud import PointCloud, Pose2D, load_cloud, save_cloud, transform_cloud
from .retrieval import Dictionary, build_database, load_db, save_db, train_dictionary
from .synth import DEFAULT_SCENE, StreetSpec, sample_world, street_trajectory, street_world, synth_pair, synth_scene

log = logging.getLogger("bvloc")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
MANIFEST_FIELDS = ("frame_id", "path", "tx", "ty", "theta_deg")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- helpers


def read_manifest(path) -> list[tuple[str, Path, Pose2D | None]]:
    """CSV with header ``frame_id,path,tx,ty,theta_deg``; paths are relative
    to the manifest. Empty pose fields mean "no pose"."""
    path = Path(path)
    rows = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"frame_id", "path"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: manifest lacks column(s) {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            pose = None
            if row.get("tx") not in (None, ""):
                try:
                    pose = Pose2D(float(row["tx"]), float(row["ty"]), math.radians(float(row["theta_deg"])))
                except (TypeError, ValueError):
                    raise ValueError(f"{path}:{lineno}: bad pose fields") from None
            rows.append((row["frame_id"], path.parent / row["path"], pose))
    return rows


def write_manifest(path, rows) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(MANIFEST_FIELDS)
        for fid, rel, p in rows:
            w.writerow([fid, rel, repr(p.tx), repr(p.ty), repr(math.degrees(p.theta))])


def manifest_frames(path):
    for fid, p, pose in read_manifest(path):
        yield load_cloud(p, frame_id=fid).with_pose(pose)


def read_poses_csv(path) -> dict[str, Pose2D]:
    out = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out[row["frame_id"]] = Pose2D(float(row["tx"]), float(row["ty"]), math.radians(float(row["theta_deg"])))
    return out


def _cfg(args) -> Config:
    cfg = load_config(args.config) if args.config else Config()
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v
    overrides["seed"] = str(args.seed)
    try:
        return with_overrides(cfg, overrides)
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from None


def _pose_arg(text: str) -> Pose2D:
    try:
        tx, ty, th = (float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected TX,TY,THETA_DEG") from None
    return Pose2D(tx, ty, math.radians(th))


# ---------------------------------------------------------------- commands


def cmd_synth(args, cfg: Config) -> None:
    if args.street:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        spec = StreetSpec(length=args.step * (args.street - 1) + 1.0)
        world = street_world(args.seed, spec)
        rng = np.random.default_rng(args.seed + 1)
        rows = []
        for i, pose in enumerate(street_trajectory(spec.length, args.step, args.seed)[: args.street]):
            pts = sample_world(rng, world, spec.scene, sensor=pose, max_range=70.0)
            if args.rotate:
                pts = transform_cloud(PointCloud(pts), Pose2D(0, 0, rng.integers(0, 6) * math.pi / 6)).points
            name = f"frame{i:04d}.bin"
            save_cloud(PointCloud(pts), out / name)
            rows.append((f"frame{i:04d}", name, pose))
        write_manifest(out / "manifest.csv", rows)
        print(f"wrote {len(rows)} frames and manifest.csv to {out}")
        return
    if args.pose is not None:
        if not args.out_b:
            raise UsageError("synth: --pose needs --out-b")
        a, b = synth_pair(args.seed, args.pose, DEFAULT_SCENE)
        save_cloud(a, args.out)
        save_cloud(b, args.out_b)
        print(f"wrote {args.out} ({len(a)} points) and {args.out_b} ({len(b)} points)")
        return
    c = synth_scene(args.seed)
    save_cloud(c, args.out)
    print(f"wrote {args.out} ({len(c)} points)")


def cmd_render(args, cfg: Config) -> None:
    img = bv_image(load_cloud(args.cloud), cfg)
    render_pgm(img, args.out)
    if args.csv:
        write_csv(img, args.csv)
    print(f"wrote {args.out} ({img.size}x{img.size})")


def cmd_describe(args, cfg: Config) -> None:
    ds = describe_cloud(load_cloud(args.cloud), cfg)
    save_descriptor_set(ds, args.out)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "u", "v", "variant", "orientation_deg"])
            for i, d in enumerate(ds):
                w.writerow([i, d.keypoint.u, d.keypoint.v, d.variant, f"{math.degrees(d.dominant_orientation):.1f}"])
    print(f"{ds.n_keypoints} keypoints, {len(ds)} descriptors -> {args.out}")


def _descriptor_stack(inputs, cfg: Config) -> np.ndarray:
    """Descriptor rows from manifests (.csv), descriptor files (.bvft) or clouds."""
    mats = []
    for p in inputs:
        p = Path(p)
        if p.suffix == ".csv":
            mats += [describe_cloud(c, cfg).vectors for c in manifest_frames(p)]
        elif p.suffix == ".bvft":
            mats.append(load_descriptor_set(p).vectors)
        else:
            mats.append(describe_cloud(load_cloud(p), cfg).vectors)
    return np.concatenate(mats)


def cmd_train(args, cfg: Config) -> None:
    x = _descriptor_stack(args.inputs, cfg)
    b = args.words or cfg.retrieval.words
    d = train_dictionary(x, b, cfg.retrieval.kmeans_iter, args.seed)
    np.save(args.out, d.centroids)
    print(f"{b} words from {len(x)} descriptors, {d.iterations} iterations, inertia {d.inertia:.6g} -> {args.out}")


def cmd_build(args, cfg: Config) -> None:
    dictionary = Dictionary(np.load(args.dict)) if args.dict else None
    db = build_database(
        manifest_frames(args.manifest),
        lambda c: describe_cloud(c, cfg),
        args.spacing if args.spacing is not None else cfg.retrieval.spacing,
        args.words or cfg.retrieval.words,
        dictionary,
        cfg.retrieval.kmeans_iter,
        args.seed,
    )
    save_db(db, args.out)
    print(f"{len(db)} keyframes, b={db.b} -> {args.out}")


def cmd_query(args, cfg: Config) -> None:
    db = load_db(args.db)
    q = db.describe_query(describe_cloud(load_cloud(args.cloud), cfg))
    res = db.query(q, args.top)
    w = csv.writer(sys.stdout)
    w.writerow(["rank", "frame_id", "distance", "tx", "ty", "theta_deg"])
    poses = {e.frame_id: e.pose for e in db.entries}
    for r, (fid, dist) in enumerate(res, start=1):
        p = poses[fid]
        w.writerow([r, fid, f"{dist:.6f}", f"{p.tx:.3f}", f"{p.ty:.3f}", f"{math.degrees(p.theta):.3f}"])


def cmd_match(args, cfg: Config) -> None:
    if args.no_icp:
        cfg = with_overrides(cfg, {"icp": "false"})
    rep = register_pair(load_cloud(args.a), load_cloud(args.b), cfg)
    text = rep.HEADER + "\n" + rep.line() + "\n"
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text)


def cmd_eval_recall(args, cfg: Config) -> None:
    db = load_db(args.db)
    queries = []
    for c in manifest_frames(args.queries):
        if c.pose is None:
            raise ValueError(f"query {c.frame_id!r} has no pose")
        queries.append((db.describe_query(describe_cloud(c, cfg)), c.pose))
    curve = eval_recall(db, queries, args.t, args.n_max)
    rows = "n,recall\n" + "".join(f"{n},{r:.6f}\n" for n, r in curve.rows())
    if args.out:
        Path(args.out).write_text(rows)
    print(f"queries={curve.n_queries} t={curve.threshold:g}")
    for n in (1, 5, 10, 25):
        if n <= len(curve.recall):
            print(f"recall@{n} = {curve.at(n):.3f}")


def cmd_eval_pose(args, cfg: Config) -> None:
    est, truth = read_poses_csv(args.estimates), read_poses_csv(args.truth)
    ids = [k for k in est if k in truth]
    if not ids:
        raise ValueError("no frame ids in common")
    rep = eval_pose([est[k] for k in ids], [truth[k] for k in ids])
    lines = ["frame_id,rte,rre_deg,success"]
    lines += [f"{k},{a:.6f},{b:.6f},{int(s)}" for k, a, b, s in zip(ids, rep.rte, rep.rre, rep.success)]
    if args.out:
        Path(args.out).write_text("\n".join(lines) + "\n")
    print(f"pairs={len(ids)} success={rep.success_rate:.3f} "
          f"RTE={rep.mean_rte:.3f}+-{rep.std_rte:.3f} m RRE={rep.mean_rre:.3f}+-{rep.std_rre:.3f} deg")


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for every randomized step")
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="bvloc", description="BV-image place recognition and pose estimation")
    p.add_argument("--version", action="version", version=f"bvloc {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic cloud, pair or street sequence")
    s.add_argument("--out", required=True, help="cloud path, or output directory with --street")
    s.add_argument("--pose", type=_pose_arg, help="TX,TY,THETA_DEG: also write a second scan seen through this pose")
    s.add_argument("--out-b", help="second cloud for --pose")
    s.add_argument("--street", type=int, default=0, metavar="N", help="write N frames along a street")
    s.add_argument("--step", type=float, default=10.0, help="street frame spacing in meters")
    s.add_argument("--rotate", action="store_true", help="rotate each street frame by a random multiple of 30 deg")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("render-bv", parents=[common], help="render a cloud's BV image as PGM")
    s.add_argument("cloud")
    s.add_argument("--out", required=True)
    s.add_argument("--csv", help="also write raw intensities as CSV")
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("describe", parents=[common], help="write BVFT descriptors of a cloud")
    s.add_argument("cloud")
    s.add_argument("--out", required=True)
    s.add_argument("--csv", help="keypoint table")
    s.set_defaults(func=cmd_describe)

    s = sub.add_parser("train-dict", parents=[common], help="k-means dictionary from clouds, .bvft files or manifests")
    s.add_argument("inputs", nargs="+")
    s.add_argument("--words", type=int, help="dictionary size b")
    s.add_argument("--out", required=True, help=".npy centroid matrix")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("build-db", parents=[common], help="keyframe database from a posed manifest")
    s.add_argument("manifest")
    s.add_argument("--dict", help="pre-trained .npy dictionary (trained on the keyframes otherwise)")
    s.add_argument("--words", type=int)
    s.add_argument("--spacing", type=float, help="keyframe spacing S in meters")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_build)

    s = sub.add_parser("query", parents=[common], help="top-N keyframes for a cloud")
    s.add_argument("db")
    s.add_argument("cloud")
    s.add_argument("--top", type=int, default=5)
    s.set_defaults(func=cmd_query)

    s = sub.add_parser("match-pair", parents=[common], help="register cloud b against cloud a")
    s.add_argument("a")
    s.add_argument("b")
    s.add_argument("--no-icp", action="store_true")
    s.add_argument("--out", help="also write the report line here")
    s.set_defaults(func=cmd_match)

    s = sub.add_parser("eval-recall", parents=[common], help="top-N recall of posed queries")
    s.add_argument("db")
    s.add_argument("queries", help="posed manifest")
    s.add_argument("--t", type=float, default=25.0, help="true-match distance in meters")
    s.add_argument("--n-max", type=int, default=25)
    s.add_argument("--out", help="recall curve CSV")
    s.set_defaults(func=cmd_eval_recall)

    s = sub.add_parser("eval-pose", parents=[common], help="RTE/RRE of estimated poses")
    s.add_argument("estimates", help="CSV frame_id,tx,ty,theta_deg")
    s.add_argument("truth", help="CSV frame_id,tx,ty,theta_deg")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval_pose)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
        cfg = _cfg(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return EXIT_OK if not exc.code else EXIT_USAGE
    try:
        args.func(args, cfg)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, RuntimeError, KeyError) as exc:
        print(f"bvloc {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
