"""Shared helpers: independent oracles kept deliberately naive."""

import math

import numpy as np
import pytest


def naive_distance_correlation(x, z):
    """Double-loop V-statistic; independent of the package implementation."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    z = np.atleast_2d(np.asarray(z, dtype=float))
    n = x.shape[0]

    def dist_matrix(a):
        d = [[0.0] * n for _ in range(n)]
        for i in range(n):
            for j in range(n):
                s = 0.0
                for k in range(a.shape[1]):
                    s += (a[i, k] - a[j, k]) ** 2
                d[i][j] = math.sqrt(s)
        return d

    def center(d):
        row = [sum(d[i]) / n for i in range(n)]
        col = [sum(d[i][j] for i in range(n)) / n for j in range(n)]
        grand = sum(row) / n
        return [[d[i][j] - row[i] - col[j] + grand for j in range(n)]
                for i in range(n)]

    a = center(dist_matrix(x))
    b = center(dist_matrix(z))
    sxz = sum(a[i][j] * b[i][j] for i in range(n) for j in range(n)) / (n * n)
    sxx = sum(a[i][j] ** 2 for i in range(n) for j in range(n)) / (n * n)
    szz = sum(b[i][j] ** 2 for i in range(n) for j in range(n)) / (n * n)
    if sxx <= 0 or szz <= 0:
        return 0.0
    return math.sqrt(max(sxz, 0.0) / math.sqrt(sxx * szz))


def central_difference(fn, vec, h=1e-5):
    """Central finite differences of a scalar function over a flat vector."""
    vec = np.asarray(vec, dtype=float)
    out = np.zeros_like(vec)
    for i in range(vec.size):
        up = vec.copy()
        up[i] += h
        down = vec.copy()
        down[i] -= h
        out[i] = (fn(up) - fn(down)) / (2 * h)
    return out


def assert_grad_close(analytic, fd, rel=1e-4, tiny=1e-8):
    """Relative comparison, absolute below the tiny threshold."""
    analytic = np.asarray(analytic, dtype=float).ravel()
    fd = np.asarray(fd, dtype=float).ravel()
    assert analytic.shape == fd.shape
    for a, f in zip(analytic, fd):
        if abs(f) < tiny:
            assert abs(a - f) < tiny * 10, f"near-zero coordinate mismatch: {a} vs {f}"
        else:
            assert abs(a - f) / abs(f) < rel, f"gradient mismatch: {a} vs {f}"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
