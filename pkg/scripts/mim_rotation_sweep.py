"""Agreement of MIM labels with the circular-shift rule under yaw.

For each scene and angle the rotated MIM is resampled back onto the
original grid and compared with ``(index + shift) mod No``. Angles that are
multiples of pi/No have an exact integer shift; for other angles the
nearest shift is used, which shows how quickly the property degrades off
the grid.

    python scripts/mim_rotation_sweep.py --scenes 5 --step 5
"""
import argparse
import math

import numpy as np

from bvloc.bvimage import unrotate_nearest
from bvloc.config import Config
from bvloc.loggabor import mim_from_image
from bvloc.pipeline import bv_image, cached_bank
from bvloc.pointcloud import Pose2D, transform_cloud
from bvloc.synth import synth_scene


def agreement(base, rotated, angle, shift, center, border=5):
    idx = unrotate_nearest(rotated.index, angle, center, fill=-1)
    ok = unrotate_nearest(rotated.valid, angle, center, fill=False) & base.valid
    ok[:border] = ok[-border:] = False
    ok[:, :border] = ok[:, -border:] = False
    n = base.n_orient
    return float((np.mod(idx + shift, n) == base.index)[ok].mean())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenes", type=int, default=5)
    ap.add_argument("--step", type=float, default=5.0, help="angle step in degrees")
    ap.add_argument("--max-angle", type=float, default=180.0)
    args = ap.parse_args()

    cfg = Config()
    bank = cached_bank(int(round(2 * cfg.C / cfg.g)), cfg.bank)
    center = cfg.C / cfg.g - 0.5
    n = cfg.bank.n_orient
    angles = np.arange(args.step, args.max_angle + 1e-9, args.step)
    print("angle_deg,shift,mean,min")
    table = {a: [] for a in angles}
    for seed in range(args.scenes):
        cloud = synth_scene(seed)
        base = mim_from_image(bv_image(cloud, cfg), bank)
        for deg in angles:
            a = math.radians(deg)
            shift = int(round(a / (math.pi / n))) % n
            rot = mim_from_image(bv_image(transform_cloud(cloud, Pose2D(0, 0, a)), cfg), bank)
            table[deg].append(agreement(base, rot, a, shift, center))
    for deg, vals in table.items():
        shift = int(round(math.radians(deg) / (math.pi / n))) % n
        print(f"{deg:g},{shift},{np.mean(vals):.3f},{np.min(vals):.3f}")


if __name__ == "__main__":
    main()
