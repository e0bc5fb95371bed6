"""The split model: per-client encoder + auxiliary head, shared global head.

The encoder output (the only representation of raw data that ever leaves a
client) feeds both the local auxiliary head and the replicated global head.
``two_stage_backward`` runs one combined backward pass: the global head's
input gradient is pushed through the cut into the encoder together with the
leakage and auxiliary gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dcor import local_loss
from .errors import UsageError
from .nn import Network, softmax_cross_entropy


@dataclass
class LocalModel:
    """Client-side pair: encoder (raw -> smashed) and auxiliary classifier.

    The smashed dimension is normally well below the raw input dimension;
    that is enforced where configurations are validated, not here, so tests
    can build identity encoders.
    """

    encoder: Network
    aux_head: Network

    def __post_init__(self):
        if self.encoder.out_dim != self.aux_head.in_dim:
            raise UsageError(
                f"aux head expects {self.aux_head.in_dim} inputs, encoder "
                f"emits {self.encoder.out_dim}"
            )

    @property
    def smashed_dim(self) -> int:
        return self.encoder.out_dim

    def copy(self) -> "LocalModel":
        return LocalModel(self.encoder.copy(), self.aux_head.copy())


@dataclass
class GlobalHead:
    """Replicated classifier over smashed data; version counts applied votes."""

    net: Network
    replica_version: int = 0

    def copy(self) -> "GlobalHead":
        return GlobalHead(self.net.copy(), self.replica_version)


@dataclass
class SmashedBatch:
    """Encoder output leaving a client."""

    z: np.ndarray
    source_client: int


def local_forward(lm: LocalModel, x, source_client: int = 0):
    """Encode a raw batch and classify it with the auxiliary head."""
    z, _ = lm.encoder.forward(x)
    aux_logits, _ = lm.aux_head.forward(z)
    return SmashedBatch(z=z, source_client=source_client), aux_logits


@dataclass
class TwoStageGrads:
    """Flat gradients per component; global_head is unweighted d L_g / d w."""

    encoder: np.ndarray
    aux_head: np.ndarray
    global_head: np.ndarray


@dataclass
class LossBreakdown:
    """Weighted loss terms; leak + fit + global_fit == total."""

    leak: float
    fit: float
    global_fit: float
    total: float


def two_stage_backward(lm: LocalModel, gh: GlobalHead, x, labels,
                       alpha1: float, alpha2: float, lam: float,
                       estimator: str = "standard"):
    """Gradients of alpha1*L_leak + alpha2*L_aux + lam*L_global for one batch.

    Returns (TwoStageGrads, LossBreakdown). The global head's own gradient is
    reported unscaled (sign aggregation is scale-invariant); its contribution
    through the cut is scaled by lam before entering the encoder.
    """
    if min(alpha1, alpha2, lam) < 0.0:
        raise UsageError("loss weights must be nonnegative")
    z, enc_cache = lm.encoder.forward(x)
    aux_logits, aux_cache = lm.aux_head.forward(z)
    head_logits, head_cache = gh.net.forward(z)

    local = local_loss(x, z, aux_logits, labels, alpha1, alpha2, estimator=estimator)
    lg, glogits = softmax_cross_entropy(head_logits, labels)

    aux_grads, z_from_aux = lm.aux_head.backward(aux_cache, local.grad_aux_logits)
    head_grads, z_from_head = gh.net.backward(head_cache, glogits)

    upstream = local.grad_z + z_from_aux + lam * z_from_head
    enc_grads, _ = lm.encoder.backward(enc_cache, upstream)

    breakdown = LossBreakdown(
        leak=local.leak_term,
        fit=local.fit_term,
        global_fit=lam * lg,
        total=local.leak_term + local.fit_term + lam * lg,
    )
    return TwoStageGrads(enc_grads, aux_grads, head_grads), breakdown


def ensemble_logits(x, local_models, gh: GlobalHead, mode: str = "global_head") -> np.ndarray:
    """Mean logits over every trained local model for a new batch.

    ``global_head`` routes each encoder's output through the shared head;
    ``aux_heads`` averages the clients' own auxiliary classifiers instead.
    """
    local_models = list(local_models)
    if not local_models:
        raise UsageError("ensemble needs at least one trained local model")
    acc = None
    for lm in local_models:
        z, _ = lm.encoder.forward(x)
        if mode == "global_head":
            logits, _ = gh.net.forward(z)
        elif mode == "aux_heads":
            logits, _ = lm.aux_head.forward(z)
        else:
            raise UsageError(f"unknown ensemble mode {mode!r}")
        acc = logits if acc is None else acc + logits
    return acc / len(local_models)


def ensemble_infer(x, local_models, gh: GlobalHead, mode: str = "global_head") -> np.ndarray:
    """Predicted labels: argmax of the ensemble-mean logits."""
    return np.argmax(ensemble_logits(x, local_models, gh, mode=mode), axis=1)
