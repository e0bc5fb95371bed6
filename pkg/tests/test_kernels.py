"""Both kernel builds must agree with each other and with naive loops."""

import numpy as np
import pytest

from splitvote import kernels


requires_numba = pytest.mark.skipif(
    not kernels.NUMBA_AVAILABLE, reason="numba not installed"
)


def test_pairwise_matches_naive(rng):
    x = rng.normal(size=(17, 5))
    want = np.zeros((17, 17))
    for i in range(17):
        for j in range(17):
            want[i, j] = np.sqrt(((x[i] - x[j]) ** 2).sum())
    got = kernels.pairwise_distances_numpy(x)
    assert np.allclose(got, want, atol=1e-12)


@requires_numba
def test_backends_agree_pairwise(rng):
    for n, p in [(2, 1), (9, 3), (33, 7), (64, 16)]:
        x = rng.normal(size=(n, p))
        a = kernels.pairwise_distances_numpy(x)
        b = kernels.pairwise_distances_numba(np.ascontiguousarray(x))
        assert np.allclose(a, b, rtol=1e-13, atol=1e-13)


@requires_numba
def test_backends_agree_grad(rng):
    for n, q in [(4, 1), (12, 3), (30, 5)]:
        z = rng.normal(size=(n, q))
        d = kernels.pairwise_distances_numpy(z)
        w = rng.normal(size=(n, n))
        w = (w + w.T) / 2
        a = kernels.dcor_grad_numpy(w, z, d)
        b = kernels.dcor_grad_numba(w, np.ascontiguousarray(z), d)
        assert np.allclose(a, b, rtol=1e-11, atol=1e-12)


def test_grad_skips_zero_distances(rng):
    z = np.array([[1.0, 2.0], [1.0, 2.0], [0.0, 0.0]])
    d = kernels.pairwise_distances_numpy(z)
    w = np.ones((3, 3))
    grad = kernels.dcor_grad_numpy(w, z, d)
    assert np.all(np.isfinite(grad))
    # rows 0 and 1 coincide; only the pair with row 2 contributes
    expected_row0 = 2.0 * (z[0] - z[2]) / d[0, 2]
    assert np.allclose(grad[0], expected_row0)


def test_active_backend_exports():
    x = np.random.default_rng(0).normal(size=(6, 2))
    d = kernels.pairwise_distances(x)
    assert d.shape == (6, 6)
    assert np.allclose(d, d.T)
    assert np.allclose(np.diag(d), 0.0)
