"""Hot edge-level kernels with a numba path and a pure-numpy fallback.

All sparse graph work in the package (behavior propagation, KG attention
sums, embedding-row gradient scatters) funnels through the two kernels
below. Set ``KMCLR_DISABLE_NUMBA=1`` before import to force the numpy path,
or call :func:`set_backend` at runtime (used by the benchmark).

Both paths accumulate in edge order, so results are bitwise identical.
"""
import os

import numpy as np

try:
    import numba
    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover
    numba = None
    NUMBA_AVAILABLE = False

_DISABLED = os.environ.get("KMCLR_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")


def _spmm_numpy(x, src, dst, weight, n_out):
    out = np.zeros((n_out, x.shape[1]), dtype=np.float64)
    if len(src):
        np.add.at(out, dst, weight[:, None] * x[src])
    return out


def _scatter_rows_numpy(values, index, n_out):
    out = np.zeros((n_out, values.shape[1]), dtype=np.float64)
    if len(index):
        np.add.at(out, index, values)
    return out


if NUMBA_AVAILABLE:

    @numba.njit(cache=True, nogil=True)
    def _spmm_numba(x, src, dst, weight, n_out):
        d = x.shape[1]
        out = np.zeros((n_out, d), dtype=np.float64)
        for e in range(src.shape[0]):
            s = src[e]
            t = dst[e]
            w = weight[e]
            for j in range(d):
                out[t, j] += w * x[s, j]
        return out

    @numba.njit(cache=True, nogil=True)
    def _scatter_rows_numba(values, index, n_out):
        d = values.shape[1]
        out = np.zeros((n_out, d), dtype=np.float64)
        for e in range(index.shape[0]):
            t = index[e]
            for j in range(d):
                out[t, j] += values[e, j]
        return out


_backend = "numpy" if (_DISABLED or not NUMBA_AVAILABLE) else "numba"


def set_backend(name):
    """Switch between ``"numba"`` and ``"numpy"``; returns the previous name."""
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not NUMBA_AVAILABLE:
        raise RuntimeError("numba is not installed")
    prev, _backend = _backend, name
    return prev


def get_backend():
    return _backend


def spmm(x, src, dst, weight, n_out):
    """``out[dst[e]] += weight[e] * x[src[e]]`` for every edge ``e``."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    src = np.ascontiguousarray(src, dtype=np.int64)
    dst = np.ascontiguousarray(dst, dtype=np.int64)
    weight = np.ascontiguousarray(weight, dtype=np.float64)
    if _backend == "numba":
        return _spmm_numba(x, src, dst, weight, int(n_out))
    return _spmm_numpy(x, src, dst, weight, int(n_out))


def scatter_rows(values, index, n_out):
    """``out[index[e]] += values[e]``; the transpose of a row gather."""
    values = np.ascontiguousarray(values, dtype=np.float64)
    index = np.ascontiguousarray(index, dtype=np.int64)
    if _backend == "numba":
        return _scatter_rows_numba(values, index, int(n_out))
    return _scatter_rows_numpy(values, index, int(n_out))
