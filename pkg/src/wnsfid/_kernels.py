"""Hot numeric kernels: numba-compiled with a pure NumPy/SciPy fallback.

The numba path is used whenever numba imports successfully.  Setting the
environment variable ``WNSFID_PURE_NUMPY=1`` (before import) forces the
fallback implementations; ``benchmarks/bench_kernels.py`` compares the two.
Both paths implement the same recurrences, so results agree to rounding.
"""

from __future__ import annotations

import os

import numpy as np

ENV_FLAG = "WNSFID_PURE_NUMPY"


def _fallback_forced() -> bool:
    return os.environ.get(ENV_FLAG, "").strip().lower() in {"1", "true", "yes", "on"}


_HAVE_NUMBA = False
if not _fallback_forced():
    try:
        from numba import njit

        _HAVE_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        pass


def using_numba() -> bool:
    """True when the numba-compiled kernels are active."""
    return _HAVE_NUMBA


# ---------------------------------------------------------------------------
# IIR filtering (direct form II transposed, same recurrence as scipy.lfilter)
# ---------------------------------------------------------------------------

def _iir_filter_py(b: np.ndarray, a: np.ndarray, x: np.ndarray,
                   zi: np.ndarray) -> np.ndarray:
    from scipy.signal import lfilter

    if zi.size == 0:
        return lfilter(b, a, x)
    y, _ = lfilter(b, a, x, zi=zi)
    return y


if _HAVE_NUMBA:

    @njit(cache=True)
    def _iir_filter_nb(b: np.ndarray, a: np.ndarray, x: np.ndarray,
                       zi: np.ndarray) -> np.ndarray:  # pragma: no cover
        """Direct form II transposed recursion.

        ``b`` and ``a`` must be padded to a common length with ``a[0] == 1``;
        ``zi`` holds the ``len(b) - 1`` initial state values.
        """
        n = b.shape[0]
        m = x.shape[0]
        y = np.empty(m)
        if n == 1:
            for t in range(m):
                y[t] = b[0] * x[t]
            return y
        z = zi.copy()
        for t in range(m):
            xt = x[t]
            yt = b[0] * xt + z[0]
            for i in range(n - 2):
                z[i] = b[i + 1] * xt + z[i + 1] - a[i + 1] * yt
            z[n - 2] = b[n - 1] * xt - a[n - 1] * yt
            y[t] = yt
        return y


def iir_filter(b: np.ndarray, a: np.ndarray, x: np.ndarray,
               zi: np.ndarray | None = None) -> np.ndarray:
    """Filter ``x`` through ``b(q)/a(q)`` (coefficients of q^-k, a[0]=1)."""
    b = np.asarray(b, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    x = np.ascontiguousarray(x, dtype=np.float64)
    n = max(b.shape[0], a.shape[0])
    if b.shape[0] < n:
        b = np.concatenate([b, np.zeros(n - b.shape[0])])
    if a.shape[0] < n:
        a = np.concatenate([a, np.zeros(n - a.shape[0])])
    if zi is None:
        zi = np.zeros(max(n - 1, 0))
    else:
        zi = np.asarray(zi, dtype=np.float64)
        if zi.shape[0] != n - 1:
            raise ValueError(f"initial state must have length {n - 1}, "
                             f"got {zi.shape[0]}")
    if _HAVE_NUMBA:
        return _iir_filter_nb(b, a, x, zi)
    return _iir_filter_py(b, a, x, zi)


# ---------------------------------------------------------------------------
# Lower-triangular (banded) Toeplitz fill
# ---------------------------------------------------------------------------

def _toeplitz_py(col: np.ndarray, m: int) -> np.ndarray:
    from scipy.linalg import toeplitz

    row = np.zeros(m)
    row[0] = col[0]
    return toeplitz(col, row)


if _HAVE_NUMBA:

    @njit(cache=True)
    def _toeplitz_nb(col: np.ndarray, m: int) -> np.ndarray:  # pragma: no cover
        n = col.shape[0]
        out = np.zeros((n, m))
        for j in range(m):
            for i in range(j, n):
                out[i, j] = col[i - j]
        return out


def toeplitz_lower(col: np.ndarray, m: int) -> np.ndarray:
    """n-by-m matrix with entry (i, j) = col[i - j] for i >= j, zero above."""
    col = np.ascontiguousarray(col, dtype=np.float64)
    if _HAVE_NUMBA:
        return _toeplitz_nb(col, m)
    return _toeplitz_py(col, m)
