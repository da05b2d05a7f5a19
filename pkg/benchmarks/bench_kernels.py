#!/usr/bin/env python3
"""Time the pixel kernels' numpy and numba implementations side by side.

Each kernel is timed on a realistic workload (full-frame grids, cluster of
Gaussian splats).  The numba variants are warmed up first so compilation
cost never lands in a measurement.  Run with ``KEYTRACK_NUMBA=0`` to check
that the numpy fallback is the only thing this package needs.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from keytrack import kernels


def _time_best(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def build_workloads(width: int, height: int, splats: int, sigma: float, seed: int):
    """Return {kernel name: {variant: zero-arg callable}} workloads."""
    rng = np.random.default_rng(seed)
    xs = rng.uniform(sigma * 4, width - sigma * 4, splats)
    ys = rng.uniform(sigma * 4, height - sigma * 4, splats)
    dxs = rng.uniform(-80.0, 80.0, splats)
    dys = rng.uniform(-80.0, 80.0, splats)
    extent = 3.0
    cutoff = 0.2

    smooth_input = rng.random((height, width))
    table = kernels.implementations()
    workloads: dict[str, dict[str, object]] = {}

    def gaussian_job(fn):
        def run():
            grid = np.zeros((height, width))
            for x, y in zip(xs, ys):
                fn(grid, x, y, sigma, extent)
            return grid

        return run

    def assoc_job(fn):
        def run():
            wsum = np.zeros((height, width))
            num_x = np.zeros((height, width))
            num_y = np.zeros((height, width))
            for x, y, dx, dy in zip(xs, ys, dxs, dys):
                fn(wsum, num_x, num_y, x, y, sigma, extent, cutoff, dx, dy)
            return wsum

        return run

    def box_job(fn):
        return lambda: fn(smooth_input, 2)

    def peak_job(fn):
        return lambda: fn(smooth_input, 0.4)

    jobs = {
        "gaussian_max": gaussian_job,
        "assoc_accumulate": assoc_job,
        "box_mean": box_job,
        "local_max_mask": peak_job,
    }
    for name, make in jobs.items():
        variants = {}
        for variant in ("numpy", "numba"):
            fn = table[name].get(variant)
            if fn is not None:
                variants[variant] = make(fn)
        workloads[name] = variants
    return workloads


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--width", type=int, default=960)
    parser.add_argument("--height", type=int, default=720)
    parser.add_argument("--splats", type=int, default=100)
    parser.add_argument("--sigma", type=float, default=12.0)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    workloads = build_workloads(
        args.width, args.height, args.splats, args.sigma, args.seed
    )
    if not kernels.NUMBA_AVAILABLE:
        print("numba unavailable or disabled; timing the numpy path only")

    print(
        f"grid {args.width}x{args.height}, {args.splats} splats, "
        f"sigma {args.sigma}, best of {args.repeats}"
    )
    header = f"{'kernel':<20} {'numpy (ms)':>12} {'numba (ms)':>12} {'speedup':>9}"
    print(header)
    print("-" * len(header))
    for name, variants in workloads.items():
        times = {}
        for variant, job in variants.items():
            job()  # warm-up; also triggers jit compilation
            times[variant] = _time_best(job, args.repeats) * 1e3
        numpy_ms = times["numpy"]
        if "numba" in times:
            numba_ms = times["numba"]
            speedup = numpy_ms / numba_ms
            print(f"{name:<20} {numpy_ms:>12.3f} {numba_ms:>12.3f} {speedup:>8.1f}x")
        else:
            print(f"{name:<20} {numpy_ms:>12.3f} {'-':>12} {'-':>9}")


if __name__ == "__main__":
    main()
