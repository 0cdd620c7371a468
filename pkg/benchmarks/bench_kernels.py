#!/usr/bin/env python3
"""Compare the numba kernels with the pure NumPy/SciPy fallback path.

The package-wide selection is made at import time via WNSFID_PURE_NUMPY; this
script calls both implementations directly so one process can time them side
by side.  Run: python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from wnsfid import _kernels


def timeit(fn, *args, repeat=5):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_iir():
    rng = np.random.default_rng(0)
    print("iir_filter (order-4 recursion)")
    for n in (10 ** 4, 10 ** 5, 10 ** 6):
        x = rng.standard_normal(n)
        b = np.array([0.2, 0.4, 0.1, -0.05, 0.01])
        a = np.array([1.0, -0.8, 0.3, -0.05, 0.01])
        zi = np.zeros(4)
        t_py = timeit(_kernels._iir_filter_py, b, a, x, zi)
        if _kernels.using_numba():
            _kernels._iir_filter_nb(b, a, x, zi)  # compile outside the timer
            t_nb = timeit(_kernels._iir_filter_nb, b, a, x, zi)
            print(f"  N={n:>8}: fallback {t_py * 1e3:8.2f} ms"
                  f"   numba {t_nb * 1e3:8.2f} ms   speedup {t_py / t_nb:5.1f}x")
        else:
            print(f"  N={n:>8}: fallback {t_py * 1e3:8.2f} ms   (numba inactive)")


def bench_toeplitz():
    rng = np.random.default_rng(1)
    print("toeplitz_lower (square fill)")
    for n in (200, 400, 1000):
        col = rng.standard_normal(n)
        t_py = timeit(_kernels._toeplitz_py, col, n)
        if _kernels.using_numba():
            _kernels._toeplitz_nb(col, n)
            t_nb = timeit(_kernels._toeplitz_nb, col, n)
            print(f"  n={n:>5}: fallback {t_py * 1e3:8.2f} ms"
                  f"   numba {t_nb * 1e3:8.2f} ms   speedup {t_py / t_nb:5.1f}x")
        else:
            print(f"  n={n:>5}: fallback {t_py * 1e3:8.2f} ms   (numba inactive)")


if __name__ == "__main__":
    print(f"numba active in package dispatch: {_kernels.using_numba()}")
    bench_iir()
    bench_toeplitz()
