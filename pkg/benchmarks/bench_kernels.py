"""numba vs numpy timings for the hot kernels and one training step.

    python3 benchmarks/bench_kernels.py [--repeats N]

The first numba call of each kernel includes JIT compilation (or a cache
load) and is reported separately.
"""

import argparse
import statistics
import time

import numpy as np

from meanflow_lab import _kernels as K


def timeit(fn, repeats):
    out = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t0)
    return statistics.median(out)


def cases(rng):
    A, B = rng.normal(size=(2000, 2)), rng.normal(size=(2000, 2))
    X = rng.normal(size=(100_000, 2))
    h = rng.normal(size=(256, 128))
    p, g = rng.normal(size=(128, 128)), rng.normal(size=(128, 128))
    m, v = np.zeros_like(p), np.zeros_like(p)
    return {
        "mean_pairwise_distance 2000x2000": lambda impl: impl(A, B),
        "hist2d 100k points, 40 bins": lambda impl: impl(X, -4.0, 4.0, -4.0, 4.0, 40),
        "silu+grad 256x128": lambda impl: impl(h),
        "adamw 128x128": lambda impl: impl(p.copy(), g, m.copy(), v.copy(), 1e-3, .9, .95, 1e-8, 1e-6, .1, .05),
    }


IMPLS = {
    "mean_pairwise_distance 2000x2000": ("mean_pairwise_distance_numpy", "mean_pairwise_distance_numba"),
    "hist2d 100k points, 40 bins": ("hist2d_numpy", "hist2d_numba"),
    "silu+grad 256x128": ("silu_numpy", "silu_numba"),
    "adamw 128x128": ("adamw_numpy", "adamw_numba"),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=20)
    args = ap.parse_args()
    if not K.HAVE_NUMBA:
        print("numba is not installed; only the numpy path can run")
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':<36}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}{'first call ms':>15}")
    for name, run in cases(rng).items():
        np_impl, nb_impl = (getattr(K, n) for n in IMPLS[name])
        t0 = time.perf_counter()
        run(nb_impl)
        first = time.perf_counter() - t0
        a = timeit(lambda: run(np_impl), args.repeats)
        b = timeit(lambda: run(nb_impl), args.repeats)
        print(f"{name:<36}{a * 1e3:>10.3f}{b * 1e3:>10.3f}{a / b:>8.1f}x{first * 1e3:>15.1f}")


if __name__ == "__main__":
    main()
