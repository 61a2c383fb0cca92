"""Benchmark the lattice kernels: numba @njit vs the pure-numpy fallback.

Usage:
    python benchmarks/bench_lattice.py [--repeats N]

The numba backend must be importable to compare both; with
SEQLAB_BACKEND=numpy only the fallback is timed.
"""

import argparse
import time

import numpy as np

from seqlab._kernels import backend_name, implementations

SIZES = [(20, 4), (50, 10), (100, 20), (200, 30)]


def time_kernel(fn, emission, transition, repeats):
    fn(emission, transition)  # warm-up / JIT compile
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn(emission, transition)
        best = min(best, time.perf_counter() - start)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()

    impls = implementations()
    print(f"active backend: {backend_name()}; comparing: {', '.join(impls)}")
    rng = np.random.default_rng(0)

    header = f"{'kernel':<10} {'n':>5} {'L':>4}"
    for name in impls:
        header += f" {name + ' (ms)':>14}"
    if len(impls) == 2:
        header += f" {'speedup':>9}"
    print(header)

    for n, L in SIZES:
        emission = rng.uniform(-2, 2, (n, L))
        transition = rng.uniform(-2, 2, (L + 1, L))
        for kernel_idx, kernel_name in ((0, "viterbi"), (1, "logZ")):
            times = {
                name: time_kernel(fns[kernel_idx], emission, transition, args.repeats)
                for name, fns in impls.items()
            }
            row = f"{kernel_name:<10} {n:>5} {L:>4}"
            for name in impls:
                row += f" {times[name] * 1e3:>14.3f}"
            if "numpy" in times and "numba" in times:
                row += f" {times['numpy'] / times['numba']:>8.1f}x"
            print(row)

    if len(impls) == 2:
        # agreement spot-check: decoded paths must match bitwise
        for n, L in SIZES:
            emission = rng.uniform(-2, 2, (n, L))
            transition = rng.uniform(-2, 2, (L + 1, L))
            paths = [fns[0](emission, transition) for fns in impls.values()]
            assert np.array_equal(paths[0], paths[1])
        print("backend agreement: decoded paths identical")


if __name__ == "__main__":
    main()
