"""Print solver widths next to their closed forms for a ball and an ellipsoid."""

import argparse
import math
import time

import numpy as np

from kwidth.geometry import ConstraintSet
from kwidth.widths import exact_profile_from_axes, width_profile


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--d", type=int, default=6)
    parser.add_argument("--eps-tol", type=float, default=1e-3)
    args = parser.parse_args()

    t0 = time.perf_counter()
    ball = width_profile(ConstraintSet.ball(args.d), args.eps_tol)
    print(f"unit ball, d = {args.d} ({time.perf_counter() - t0:.1f}s)")
    print(" k   solver    sqrt(1-k/d)")
    for k, w in enumerate(ball.widths):
        print(f"{k:2d}  {w:.6f}  {math.sqrt(1 - k / args.d):.6f}")

    axes = np.arange(args.d, 0, -1, dtype=float)
    t0 = time.perf_counter()
    ell = width_profile(ConstraintSet.ellipsoid(axes), args.eps_tol)
    ref = exact_profile_from_axes(axes)
    print(f"\nellipsoid, axes {axes.tolist()} ({time.perf_counter() - t0:.1f}s)")
    print(" k   solver    water-filling  PCA width")
    for k in range(args.d + 1):
        pca = axes[k] if k < args.d else 0.0
        print(f"{k:2d}  {ell.widths[k]:.6f}  {ref.widths[k]:.6f}       {pca:.6f}")


if __name__ == "__main__":
    main()
