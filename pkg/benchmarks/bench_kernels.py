"""Time the numba kernels against their numpy counterparts.

    python3 benchmarks/bench_kernels.py [--repeat N]

The numba timings exclude the first (compiling) call.
"""
import argparse
import time

import numpy as np

from csikit import _accel


def best_of(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    S, A, D, T = 57, 3, 400, 2000
    yield "scatter_sum S=57 A=3 D=400 T=2000", (
        _accel.scatter_sum_loop, _accel.scatter_sum_numpy,
        (rng.standard_normal((S, A, D)) + 1j * rng.standard_normal((S, A, D)),
         rng.uniform(-500, 500, (S, D)), T, 1000.0))
    M, F, K, n_a = 6, 241, 441, 20
    base = rng.random((M, F))
    target = rng.random((M, F))
    yield "emd_scores M=6 F=241 K=441 n_a=20", (
        _accel.emd_scores_loop, _accel.emd_scores_numpy,
        (np.cumsum(base, 1), base.sum(1), np.cumsum(target / target.sum(1, keepdims=True), 1),
         rng.integers(-1, F, (M, K)), np.linspace(0.05, 1, n_a), float(F - 1)))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if not _accel.USE_NUMBA:
        print("numba disabled; the loop column times the pure-Python loops")
    rng = np.random.default_rng(0)
    print(f"{'kernel':40s} {'loop [s]':>10s} {'numpy [s]':>10s} {'speedup':>8s}")
    for name, (loop, vec, a) in cases(rng):
        loop(*a)  # compile
        tl = best_of(loop, a, args.repeat)
        tv = best_of(vec, a, args.repeat)
        assert np.allclose(loop(*a), vec(*a), rtol=1e-9, atol=1e-9)
        print(f"{name:40s} {tl:10.4f} {tv:10.4f} {tv / tl:8.1f}x")


if __name__ == "__main__":
    main()
