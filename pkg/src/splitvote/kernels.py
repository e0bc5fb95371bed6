"""Hot numeric kernels, each with a numba @njit build and a pure-numpy twin.

The distance-correlation path is the only part of the simulator whose inner
loops are not already BLAS-bound: building the pairwise Euclidean distance
matrix is O(n^2 p) and pushing the loss back through it is O(n^2 q). Both
kernels below exist twice and compute identical values (IEEE order may differ
in the last ulp between builds, never across runs of the same build).

Backend selection, fixed at import time via the SPLITVOTE_NUMBA env var:

    unset / "auto"  use numba when importable, else numpy
    "0"             force the pure-numpy path
    "1"             force numba, raise if unavailable

Both variants stay importable (``pairwise_distances_numpy`` etc.) so the
equivalence tests and ``benchmarks/bench_kernels.py`` can compare them.
"""

from __future__ import annotations

import os

import numpy as np
from scipy.spatial.distance import cdist

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - sandbox always has numba
    NUMBA_AVAILABLE = False


def pairwise_distances_numpy(x: np.ndarray) -> np.ndarray:
    """n x n Euclidean distance matrix for row samples x (n x p)."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    return cdist(x, x)


def dcor_grad_numpy(w: np.ndarray, z: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Gradient of sum_ij w_ij * ||z_i - z_j|| with respect to z.

    ``w`` must be symmetric; pairs with d_ij == 0 contribute zero
    (subgradient at coincident points). Returns an n x q array where
    grad_i = 2 * sum_j w_ij * (z_i - z_j) / d_ij.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        m = np.where(d > 0.0, w / np.where(d > 0.0, d, 1.0), 0.0)
    return 2.0 * (m.sum(axis=1)[:, None] * z - m @ z)


if NUMBA_AVAILABLE:

    @njit(cache=True)
    def pairwise_distances_numba(x):
        n, p = x.shape
        out = np.zeros((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                s = 0.0
                for k in range(p):
                    diff = x[i, k] - x[j, k]
                    s += diff * diff
                v = np.sqrt(s)
                out[i, j] = v
                out[j, i] = v
        return out

    @njit(cache=True)
    def dcor_grad_numba(w, z, d):
        n, q = z.shape
        out = np.zeros((n, q))
        for i in range(n):
            for j in range(n):
                dij = d[i, j]
                if dij > 0.0:
                    c = 2.0 * w[i, j] / dij
                    for k in range(q):
                        out[i, k] += c * (z[i, k] - z[j, k])
        return out

else:  # pragma: no cover
    pairwise_distances_numba = None
    dcor_grad_numba = None


def _use_numba() -> bool:
    flag = os.environ.get("SPLITVOTE_NUMBA", "auto").strip().lower()
    if flag in ("0", "false", "numpy"):
        return False
    if flag in ("1", "true", "numba"):
        if not NUMBA_AVAILABLE:
            raise ImportError("SPLITVOTE_NUMBA=1 but numba is not importable")
        return True
    return NUMBA_AVAILABLE


USING_NUMBA = _use_numba()

if USING_NUMBA:
    _pairwise_impl = pairwise_distances_numba
    _grad_impl = dcor_grad_numba
else:
    _pairwise_impl = pairwise_distances_numpy
    _grad_impl = dcor_grad_numpy


def pairwise_distances(x: np.ndarray) -> np.ndarray:
    """Pairwise Euclidean distances via the active backend."""
    return _pairwise_impl(np.ascontiguousarray(x, dtype=np.float64))


def dcor_grad(w: np.ndarray, z: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Distance-matrix chain-rule gradient via the active backend."""
    return _grad_impl(
        np.ascontiguousarray(w, dtype=np.float64),
        np.ascontiguousarray(z, dtype=np.float64),
        np.ascontiguousarray(d, dtype=np.float64),
    )
