#!/usr/bin/env python3
"""Benchmark the decode kernels: compiled extension vs numpy fallback.

Usage:
    python benchmarks/bench_kernels.py [--quick]

Times the boundary-aware Viterbi kernel and the DTW kernel on sizes from
toy to realistic (a few minutes of speech at 50 fps over a 40-phoneme
inventory) and prints a speedup table.  Both backends are also checked
for bitwise-identical outputs on every benchmarked instance.
"""
import argparse
import time

import numpy as np

from dysflux import kernels


def _time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_viterbi(backends, sizes, repeats):
    rng = np.random.default_rng(0)
    rows = []
    for t, n in sizes:
        lp = np.ascontiguousarray(rng.normal(size=(t, n)))
        w = np.ascontiguousarray(rng.normal(size=(n, n)))
        sb = rng.normal(size=t)
        ss = rng.normal(size=t)
        results = {}
        times = {}
        for name, impl in backends.items():
            times[name] = _time(lambda impl=impl: impl.viterbi_path(lp, w, sb, ss, 0), repeats)
            results[name] = impl.viterbi_path(lp, w, sb, ss, 0)
        names = list(backends)
        if len(names) == 2:
            a, b = results[names[0]], results[names[1]]
            assert np.array_equal(a[0], b[0]) and a[1] == b[1], "backend outputs differ"
        rows.append((f"viterbi t={t} n={n}", times))
    return rows


def bench_dtw(backends, sizes, repeats):
    rng = np.random.default_rng(1)
    rows = []
    for r, c in sizes:
        cost = np.ascontiguousarray(rng.random((r, c)))
        results = {}
        times = {}
        for name, impl in backends.items():
            times[name] = _time(lambda impl=impl: impl.dtw_grid(cost), repeats)
            results[name] = impl.dtw_grid(cost)
        names = list(backends)
        if len(names) == 2:
            (pa, ta), (pb, tb) = results[names[0]], results[names[1]]
            assert np.array_equal(pa, pb) and ta == tb, "backend outputs differ"
        rows.append((f"dtw {r}x{c}", times))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--quick", action="store_true", help="small sizes, one repeat")
    args = ap.parse_args()

    backends = kernels.available_backends()
    print(f"active backend: {kernels.BACKEND}; comparing: {', '.join(backends)}\n")

    if args.quick:
        vit_sizes = [(200, 40), (1000, 40)]
        dtw_sizes = [(60, 120), (200, 400)]
        repeats = 1
    else:
        vit_sizes = [(200, 40), (1000, 40), (5000, 40), (5000, 80)]
        dtw_sizes = [(60, 120), (200, 400), (500, 1000)]
        repeats = 3

    rows = bench_viterbi(backends, vit_sizes, repeats)
    rows += bench_dtw(backends, dtw_sizes, repeats)

    names = list(backends)
    header = f"{'case':24s}" + "".join(f"{n:>12s}" for n in names)
    if len(names) == 2:
        header += f"{'speedup':>10s}"
    print(header)
    print("-" * len(header))
    for case, times in rows:
        line = f"{case:24s}" + "".join(f"{times[n] * 1e3:10.2f}ms" for n in names)
        if len(names) == 2:
            line += f"{times[names[0]] / times[names[1]]:9.1f}x"
        print(line)


if __name__ == "__main__":
    main()
