"""Do correlation peaks on raw voxel grids follow linear motion?

For translating scenes, correlates the reference voxel grid against every
segment grid and reports, per segment ``i``, the fraction of event pixels
whose correlation argmax lies within ``--tol`` pixels of ``x + i * u / g``.

    python scripts/check_linear_motion.py --scenes 20 --points 2
"""
from __future__ import annotations

import argparse
import sys
import time

import numpy as np

from tmaflow.analysis import linear_motion_hit_rates
from tmaflow.synth import generate_dataset


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenes", type=int, default=20)
    ap.add_argument("--seed", type=int, default=11)
    ap.add_argument("--size", type=int, default=32)
    ap.add_argument("--points", type=int, default=2)
    ap.add_argument("--speed-max", type=float, default=6.0)
    ap.add_argument("--g", type=int, default=5)
    ap.add_argument("--bins", type=int, default=3)
    ap.add_argument("--tol", type=float, default=1.0)
    args = ap.parse_args(argv)

    t = time.time()
    scenes = generate_dataset(args.scenes, args.seed, (0.0, args.speed_max),
                              (args.size, args.size), g=args.g, num_points=args.points)
    rates = linear_motion_hit_rates(scenes, args.g, args.bins, args.tol)
    for i, r in enumerate(rates, start=1):
        print(f"segment {i}: {100 * r:.1f}% of event pixels within {args.tol:g} px")
    print(f"worst segment {100 * float(np.min(rates)):.1f}%  ({time.time() - t:.1f}s)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
