"""Benchmark the numba kernels against the pure-numpy fallback.

Run with the default backend, then force the fallback:

    python benchmarks/bench_accel.py
    NONLOCAL_NUMBA=0 python benchmarks/bench_accel.py

or compare both in one process with --both (the numpy path is always
callable directly; only the dispatcher obeys the env flag).
"""

import argparse
import time

import numpy as np

from nonlocalflow import _accel


def timeit(fn, repeats=5):
    fn()  # warm-up (includes JIT compilation on the numba path)
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_radial_sum(n_points, n_centers, dim, both):
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(n_points, dim))
    centers = rng.normal(size=(n_centers, dim))
    weights = rng.uniform(0.1, 1.0, n_centers)
    args = (pts, centers, weights, _accel.PROFILE_BUMP, 0.8, 1.0)
    rows = [(_accel.BACKEND, timeit(lambda: _accel.radial_sum(*args)))]
    if both:
        rows.append(("numpy", timeit(lambda: _accel._radial_sum_numpy(*args))))
    return rows


def bench_w1_merge(n, both):
    rng = np.random.default_rng(1)
    xu = np.sort(rng.normal(size=n))
    xv = np.sort(rng.normal(size=n))
    wu = np.full(n, 1.0 / n)
    wv = np.full(n, 1.0 / n)
    rows = [(_accel.BACKEND, timeit(lambda: _accel.w1_cdf_merge(xu, wu, xv, wv)))]
    if both:
        rows.append(("numpy", timeit(lambda: _accel._w1_cdf_merge_numpy(xu, wu, xv, wv))))
    return rows


def bench_simplex(n, both):
    rng = np.random.default_rng(2)
    a = rng.normal(size=(n, 2))
    b = rng.normal(size=(n, 2))
    cost = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
    supply = np.full(n, 1.0 / n)
    demand = np.full(n, 1.0 / n)
    rows = [(_accel.BACKEND, timeit(lambda: _accel.transport_simplex(cost, supply, demand), 3))]
    if both:
        piv = 1e-12 * cost.max()
        rows.append(
            (
                "numpy",
                timeit(
                    lambda: _accel._transport_simplex_numpy(
                        cost, supply, demand, piv, 60 * (2 * n + 1), 660 * (2 * n + 1)
                    ),
                    3,
                ),
            )
        )
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--both", action="store_true",
                        help="also time the numpy fallback in this process")
    args = parser.parse_args()

    print(f"active backend: {_accel.BACKEND}")
    print(f"{'kernel':<34}{'backend':<10}{'best (ms)':>12}")
    print("-" * 56)

    for n_pts, n_src in ((200, 200), (1000, 1000), (4000, 4000)):
        for backend, secs in bench_radial_sum(n_pts, n_src, 2, args.both):
            label = f"radial_sum {n_pts}x{n_src} d=2"
            print(f"{label:<34}{backend:<10}{secs * 1e3:>12.3f}")
    for n in (1000, 100_000):
        for backend, secs in bench_w1_merge(n, args.both):
            label = f"w1_cdf_merge n={n}"
            print(f"{label:<34}{backend:<10}{secs * 1e3:>12.3f}")
    for n in (50, 150, 300):
        for backend, secs in bench_simplex(n, args.both):
            label = f"transport_simplex {n}x{n}"
            print(f"{label:<34}{backend:<10}{secs * 1e3:>12.3f}")


if __name__ == "__main__":
    main()
