"""Benchmark the JIT kernels against their pure-numpy fallbacks.

Run with the package installed:

    python3 benchmarks/bench_kernels.py

The JIT column is skipped when numba is unavailable or RSCIR_PURE_NUMPY
is set.
"""

from __future__ import annotations

import time

import numpy as np

from rscir import kernels


def timeit(fn, *args, repeat: int = 5) -> float:
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def bench_cdf(n: int = 1_000_000):
    rng = np.random.default_rng(0)
    x = rng.uniform(-6, 6, size=n)
    out = np.empty_like(x)
    rows = []
    t_np = timeit(kernels._cdf_half_numpy, x, out)
    rows.append(("numpy", t_np))
    if kernels.USING_NUMBA:
        kernels._cdf_half_kernel(x[:16], out[:16])  # compile
        rows.append(("numba", timeit(kernels._cdf_half_kernel, x, out)))
    return f"normal_cdf n={n}", rows


def bench_jacobi(d: int):
    rng = np.random.default_rng(1)
    a = rng.standard_normal((d, d))
    a = 0.5 * (a + a.T)
    tol = 1e-12 * np.linalg.norm(a)

    def run_numpy():
        kernels._jacobi_numpy(a.copy(), np.eye(d), tol, 100)

    rows = [("numpy", timeit(run_numpy, repeat=2))]
    if kernels.USING_NUMBA:
        small = np.eye(3)
        kernels._jacobi_kernel(small.copy(), np.eye(3), 1e-12, 100)  # compile

        def run_numba():
            kernels._jacobi_kernel(a.copy(), np.eye(d), tol, 100)

        rows.append(("numba", timeit(run_numba, repeat=2)))
    return f"jacobi_eigh d={d}", rows


def bench_ap(n: int = 30_000, repeats: int = 200):
    rng = np.random.default_rng(2)
    hits = (rng.random(n) < 0.01).astype(np.uint8)
    n_pos = max(int(hits.sum()), 1)

    def run_numpy():
        for _ in range(repeats):
            kernels._ap_numpy(hits, n_pos)

    rows = [("numpy", timeit(run_numpy, repeat=3))]
    if kernels.USING_NUMBA:
        kernels._ap_kernel(hits[:8], 1)  # compile

        def run_numba():
            for _ in range(repeats):
                kernels._ap_kernel(hits, n_pos)

        rows.append(("numba", timeit(run_numba, repeat=3)))
    return f"average_precision n={n} x{repeats}", rows


def main():
    print(f"numba path enabled: {kernels.USING_NUMBA}")
    benches = [bench_cdf(), bench_jacobi(64), bench_jacobi(256), bench_ap()]
    for label, rows in benches:
        base = dict(rows).get("numpy")
        print(f"\n{label}")
        for name, t in rows:
            speedup = f"  ({base / t:5.1f}x vs numpy)" if name == "numba" else ""
            print(f"  {name:6s} {t * 1e3:10.2f} ms{speedup}")


if __name__ == "__main__":
    main()
