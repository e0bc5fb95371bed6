"""Distance covariance / correlation estimators and the leakage loss.

The default estimator is the doubly-centered V-statistic: build pairwise
Euclidean distance matrices, subtract row means, column means, add the grand
mean, then average elementwise products. It is biased, nonnegative, and
differentiable almost everywhere, which is what the training loss needs.

A Gram-trace surrogate is also provided: after column-centering both sample
matrices it returns tr((X Xt)(Z Zt)) / n^2 = ||Xt Z||_F^2 / n^2, i.e. the
squared Frobenius norm of the empirical cross-covariance. It is cheaper but
is not the same quantity as distance correlation; the loss accepts either
via ``estimator={"standard", "trace"}``.

Gradients flow through the distance matrices analytically. Double centering
is the linear map D -> H D H with H = I - 11t/n, which is self-adjoint, so
the chain rule back to the distances is a centered weight matrix and the
remaining work is the O(n^2 q) accumulation done in ``kernels``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import UsageError
from .nn import ensure_finite, softmax_cross_entropy

EPS_LOG = 1e-12  # floor inside log(dcor); also the degenerate-loss value


@dataclass(frozen=True)
class DcorEstimate:
    """Squared distance covariances and the normalized correlation."""

    dcov2_xz: float
    dcov2_xx: float
    dcov2_zz: float
    dcor: float
    degenerate: bool = False


def double_center(d: np.ndarray) -> np.ndarray:
    """Subtract row means and column means, add back the grand mean."""
    row = d.mean(axis=1, keepdims=True)
    col = d.mean(axis=0, keepdims=True)
    return d - row - col + d.mean()


def _as_sample_matrix(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise UsageError(f"{name} must be a (samples, features) matrix")
    ensure_finite(a, name)
    return a


def distance_correlation(x, z) -> DcorEstimate:
    """Biased (V-statistic) distance correlation between paired samples.

    Rows of x and z are paired observations; n >= 2 required. Constant x or
    z makes the corresponding self-covariance vanish, in which case dcor
    is 0 by convention and the estimate is flagged degenerate.
    """
    x = _as_sample_matrix(x, "x")
    z = _as_sample_matrix(z, "z")
    n = x.shape[0]
    if z.shape[0] != n:
        raise UsageError(f"sample counts differ: {n} vs {z.shape[0]}")
    if n < 2:
        raise UsageError("distance correlation needs at least 2 samples")
    a = double_center(kernels.pairwise_distances(x))
    b = double_center(kernels.pairwise_distances(z))
    n2 = float(n * n)
    dcov2_xz = max(float((a * b).sum()) / n2, 0.0)
    dcov2_xx = max(float((a * a).sum()) / n2, 0.0)
    dcov2_zz = max(float((b * b).sum()) / n2, 0.0)
    if dcov2_xx <= 0.0 or dcov2_zz <= 0.0:
        return DcorEstimate(dcov2_xz, dcov2_xx, dcov2_zz, 0.0, degenerate=True)
    dcor = float(np.sqrt(dcov2_xz / np.sqrt(dcov2_xx * dcov2_zz)))
    return DcorEstimate(dcov2_xz, dcov2_xx, dcov2_zz, min(dcor, 1.0))


def trace_dcov_surrogate(x, z) -> float:
    """Cross-covariance Gram surrogate: ||X_c^T Z_c||_F^2 / n^2.

    Columns of both matrices are mean-centered first. Equals the trace of
    the product of the two sample Gram matrices over n^2; always >= 0.
    """
    x = _as_sample_matrix(x, "x")
    z = _as_sample_matrix(z, "z")
    n = x.shape[0]
    if z.shape[0] != n:
        raise UsageError(f"sample counts differ: {n} vs {z.shape[0]}")
    xc = x - x.mean(axis=0)
    zc = z - z.mean(axis=0)
    cross = xc.T @ zc
    return float((cross * cross).sum()) / float(n * n)


def log_dcor_loss(x, z, estimator: str = "standard"):
    """log of the dependence measure between x and z, with d loss / d z.

    Returns (loss, grad_z, degenerate). The loss is ln(max(value, 1e-12));
    when the estimate degenerates (constant z, exact independence) the
    gradient is zero and the flag is set. Coincident sample pairs contribute
    zero gradient (subgradient choice at distance 0).
    """
    x = _as_sample_matrix(x, "x")
    z = _as_sample_matrix(z, "z")
    n = x.shape[0]
    if n < 2:
        raise UsageError("log_dcor_loss needs at least 2 samples")
    if estimator == "trace":
        return _log_trace_loss(x, z)
    if estimator != "standard":
        raise UsageError(f"unknown estimator {estimator!r}")

    dx = kernels.pairwise_distances(x)
    dz = kernels.pairwise_distances(z)
    a = double_center(dx)
    b = double_center(dz)
    n2 = float(n * n)
    s_xz = float((a * b).sum()) / n2
    s_xx = float((a * a).sum()) / n2
    s_zz = float((b * b).sum()) / n2
    if s_xx <= 0.0 or s_zz <= 0.0 or s_xz <= 0.0:
        return float(np.log(EPS_LOG)), np.zeros_like(z), True
    dcor = float(np.sqrt(s_xz / np.sqrt(s_xx * s_zz)))
    if dcor <= EPS_LOG:
        return float(np.log(EPS_LOG)), np.zeros_like(z), True
    loss = float(np.log(dcor))
    # loss = 0.5 ln s_xz - 0.25 ln s_xx - 0.25 ln s_zz; centering is
    # self-adjoint, so d loss / d Dz = 0.5/n^2 (A/s_xz - B/s_zz).
    w = (a / s_xz - b / s_zz) * (0.5 / n2)
    grad = kernels.dcor_grad(w, z, dz)
    return loss, grad, False


def _log_trace_loss(x, z):
    n = x.shape[0]
    xc = x - x.mean(axis=0)
    zc = z - z.mean(axis=0)
    cross = xc.T @ zc
    value = float((cross * cross).sum()) / float(n * n)
    if value <= EPS_LOG:
        return float(np.log(EPS_LOG)), np.zeros_like(z), True
    # d value / d z = 2 H Gx Zc / n^2 and H Gx = Gx since Xc is centered
    grad_value = 2.0 * (xc @ (xc.T @ zc)) / float(n * n)
    return float(np.log(value)), grad_value / value, False


@dataclass
class LocalLossResult:
    """Weighted local loss: leakage term + auxiliary fit term."""

    total: float
    leak_term: float  # alpha1 * log-dcor
    fit_term: float  # alpha2 * cross-entropy
    grad_z: np.ndarray  # d total / d z, leakage path only
    grad_aux_logits: np.ndarray  # d total / d aux logits
    degenerate: bool


def local_loss(x, z, aux_logits, labels, alpha1: float, alpha2: float,
               estimator: str = "standard") -> LocalLossResult:
    """alpha1 * log-dcor(x, z) + alpha2 * cross-entropy(aux_logits, labels).

    grad_z covers only the leakage path; the cross-entropy reaches z through
    the auxiliary head, so its logit gradient is returned for the caller to
    backpropagate.
    """
    if alpha1 < 0.0 or alpha2 < 0.0:
        raise UsageError("loss weights must be nonnegative")
    z = np.asarray(z, dtype=np.float64)
    degenerate = False
    if alpha1 > 0.0:
        l1, gz, degenerate = log_dcor_loss(x, z, estimator=estimator)
    else:
        l1, gz = 0.0, np.zeros_like(z)
    l2, glog = softmax_cross_entropy(aux_logits, labels)
    return LocalLossResult(
        total=alpha1 * l1 + alpha2 * l2,
        leak_term=alpha1 * l1,
        fit_term=alpha2 * l2,
        grad_z=alpha1 * gz,
        grad_aux_logits=alpha2 * glog,
        degenerate=degenerate,
    )
