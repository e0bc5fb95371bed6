"""Sign compression, majority voting, and the baseline aggregation rules.

Wire encoding of a sign vector is bit-exact and documented: a 4-byte
little-endian coordinate count, then ceil(length / 8) payload bytes packed
most-significant-bit first (+1 -> 1, -1 -> 0; trailing pad bits are zero).
The logical payload size is one bit per coordinate regardless of padding.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import NumericsError, ProtocolError, UsageError


@dataclass(frozen=True)
class SignVector:
    """Immutable packed vector over {-1, +1}."""

    length: int
    packed: bytes

    @classmethod
    def from_signs(cls, signs) -> "SignVector":
        signs = np.asarray(signs)
        if signs.ndim != 1:
            raise UsageError("sign vector must be one-dimensional")
        if not np.all(np.abs(signs) == 1):
            raise UsageError("sign vector entries must be -1 or +1")
        bits = (signs > 0).astype(np.uint8)
        return cls(length=int(signs.size), packed=np.packbits(bits).tobytes())

    def signs(self) -> np.ndarray:
        """Decode to an int8 array over {-1, +1}."""
        bits = np.unpackbits(np.frombuffer(self.packed, dtype=np.uint8))[: self.length]
        return (bits.astype(np.int8) * 2) - 1

    @property
    def payload_bits(self) -> int:
        return self.length

    def encode(self) -> bytes:
        return struct.pack("<I", self.length) + self.packed

    @classmethod
    def decode(cls, buf: bytes) -> "SignVector":
        if len(buf) < 4:
            raise ProtocolError("sign message shorter than its length prefix")
        (length,) = struct.unpack_from("<I", buf, 0)
        want = (length + 7) // 8
        if len(buf) - 4 != want:
            raise ProtocolError(
                f"sign message payload is {len(buf) - 4} bytes, expected {want}"
            )
        return cls(length=length, packed=buf[4:])


def sign_compress(g) -> SignVector:
    """One bit per coordinate: +1 where g > 0, otherwise -1 (zero maps to -1)."""
    g = np.asarray(g, dtype=np.float64)
    if np.any(np.isnan(g)):
        raise NumericsError("cannot sign-compress NaN gradient coordinates")
    return SignVector.from_signs(np.where(g > 0.0, 1, -1).astype(np.int8))


@dataclass(frozen=True)
class VoteResult:
    """Per-coordinate majority decision plus the (server-only) tally."""

    decision: SignVector
    tally: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "tally", np.asarray(self.tally, dtype=np.int64))


def majority_vote(signs) -> VoteResult:
    """Per-coordinate sign of the summed client signs; ties resolve to +1."""
    signs = list(signs)
    if not signs:
        raise UsageError("majority vote needs at least one sign vector")
    length = signs[0].length
    for sv in signs:
        if sv.length != length:
            raise ProtocolError(
                f"sign vectors disagree on length: {sv.length} vs {length}"
            )
    tally = np.zeros(length, dtype=np.int64)
    for sv in signs:
        tally += sv.signs()
    decision = np.where(tally >= 0, 1, -1).astype(np.int8)
    return VoteResult(decision=SignVector.from_signs(decision), tally=tally)


def apply_vote(params, vote: SignVector, delta: float) -> np.ndarray:
    """One voted step: params - delta * decoded signs. Every coordinate moves by delta."""
    params = np.asarray(params, dtype=np.float64)
    if params.ndim != 1 or params.size != vote.length:
        raise UsageError(
            f"parameter vector of length {params.size} does not match vote of {vote.length}"
        )
    if not delta > 0.0:
        raise UsageError("learning rate must be positive")
    return params - delta * vote.signs().astype(np.float64)


def fedavg_aggregate(client_params) -> np.ndarray:
    """Sample-count-weighted average of client parameter vectors."""
    pairs = [(np.asarray(p, dtype=np.float64), int(c)) for p, c in client_params]
    if not pairs:
        raise UsageError("nothing to aggregate")
    length = pairs[0][0].size
    total = 0
    acc = np.zeros(length)
    for params, count in pairs:
        if params.size != length:
            raise ProtocolError(
                f"parameter vectors disagree on length: {params.size} vs {length}"
            )
        if count <= 0:
            raise UsageError("sample counts must be positive")
        acc += params * count
        total += count
    return acc / total


def fedprox_local_grad(g, w_local, w_global, mu: float) -> np.ndarray:
    """Gradient with the proximal pull toward the last broadcast model."""
    g = np.asarray(g, dtype=np.float64)
    w_local = np.asarray(w_local, dtype=np.float64)
    w_global = np.asarray(w_global, dtype=np.float64)
    if not (g.shape == w_local.shape == w_global.shape):
        raise UsageError("gradient and parameter vectors must share a shape")
    if mu < 0.0:
        raise UsageError("proximal weight must be nonnegative")
    return g + mu * (w_local - w_global)
