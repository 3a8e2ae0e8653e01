"""Compiled vs interpreted timings for the three hot loops.

    python3 benchmarks/bench_kernels.py [--reps 5]

The interpreted path is each kernel's ``py_func``, the same code that runs
under ``BESSMARKET_NO_NUMBA=1``.
"""

import argparse
import time

import numpy as np

from bessmarket._accel import NUMBA_AVAILABLE
from bessmarket.agc import soc_walk_kernel
from bessmarket.datasets import table1_battery
from bessmarket.degradation import PWLSegments, rainflow_kernel, segment_walk_kernel, turning_points_kernel


def best_of(fn, args, reps):
    fn(*args)  # warm-up (and JIT compile)
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    bt = table1_battery()
    seg = PWLSegments.build(bt, 10)
    soc = np.clip(100 + np.cumsum(rng.normal(0, 2, 24 * 45 + 1)), bt.soc_min, bt.soc_max)
    fill = np.full(10, seg.segment_energy) * (np.arange(10) < 5)
    tp = turning_points_kernel(soc)
    setpoints = rng.uniform(-10, 10, (24, 45))
    base = rng.uniform(-20, 20, 24)
    return {
        "turning points": (turning_points_kernel, (soc,)),
        "rainflow": (rainflow_kernel, (tp,)),
        "segment walk": (segment_walk_kernel, (soc, seg.segment_energy, seg.costs, fill)),
        "soc walk": (soc_walk_kernel, (bt.soc_initial, base, setpoints, 1 / 45, 0.95, 0.95)),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if not NUMBA_AVAILABLE:
        print("numba unavailable or disabled; nothing to compare")
        return
    print(f"{'kernel':<16}{'numba (ms)':>12}{'python (ms)':>13}{'speed-up':>10}")
    for name, (fn, fargs) in cases(np.random.default_rng(args.seed)).items():
        fast = best_of(fn, fargs, args.reps)
        slow = best_of(fn.py_func, fargs, args.reps)
        print(f"{name:<16}{1e3 * fast:>12.3f}{1e3 * slow:>13.3f}{slow / fast:>9.1f}x")


if __name__ == "__main__":
    main()
