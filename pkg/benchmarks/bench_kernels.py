#!/usr/bin/env python3
"""Time the compiled kernels against their pure-Python fallbacks.

The package selects its backend once at import from SEMIWEAK_BACKEND; this
script imports the compiled functions (when numba is available) and their
undecorated sources, runs both on identical inputs, and prints a table.

Usage: python benchmarks/bench_kernels.py [--quick]
"""
import argparse
import time

import numpy as np

from semiweak import _kernels


def timeit(fn, *args, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def bench_decode(rng, quick):
    sizes = [(100, 100), (1_000, 1_000), (10_000, 10_000)]
    if quick:
        sizes = sizes[:2]
    rows = []
    for k, bag_size in sizes:
        lam = np.maximum(rng.uniform(0.0, 3.0, size=k), 1e-12)
        args = (lam, bag_size, False)
        _kernels.greedy_count_fill(*args)  # JIT warm-up
        compiled = timeit(_kernels.greedy_count_fill, *args, repeats=5)
        fallback = timeit(_kernels.greedy_count_fill_py, *args, repeats=3 if k < 10_000 else 1)
        rows.append((f"count fill K={k} N={bag_size}", compiled, fallback))
    return rows

def bench_assign(rng, quick):
    sizes = [16, 64, 256]
    if quick:
        sizes = sizes[:2]
    rows = []
    for n in sizes:
        cost = rng.uniform(0.0, 30.0, size=(n, n))
        _kernels.solve_square_assignment(cost)
        compiled = timeit(_kernels.solve_square_assignment, cost, repeats=5)
        fallback = timeit(_kernels.solve_square_assignment_py, cost, repeats=3 if n <= 64 else 1)
        rows.append((f"assignment n={n}", compiled, fallback))
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--quick", action="store_true", help="skip the largest sizes")
    args = parser.parse_args()

    print(f"selected backend: {_kernels.BACKEND}")
    if _kernels.BACKEND != "numba":
        print("numba backend not active; timing the pure-Python path against itself.")

    rng = np.random.default_rng(0)
    rows = bench_decode(rng, args.quick) + bench_assign(rng, args.quick)
    width = max(len(r[0]) for r in rows)
    print(f"\n{'kernel':<{width}}  {'compiled':>12}  {'pure python':>12}  {'speedup':>8}")
    for name, compiled, fallback in rows:
        speedup = fallback / compiled if compiled > 0 else float("inf")
        print(f"{name:<{width}}  {compiled*1e3:>10.3f}ms  {fallback*1e3:>10.3f}ms  {speedup:>7.1f}x")


if __name__ == "__main__":
    main()
