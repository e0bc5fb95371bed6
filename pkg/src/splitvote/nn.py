"""Dense networks with hand-written backprop.

Everything is float64 numpy. A network's parameters flatten into a single
vector with a fixed coordinate order (layer by layer: row-major weight
matrix, then bias), so optimizers and wire encoders can treat any model as
one coordinate vector. flatten/unflatten round-trip bit-exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, IngestError, NumericsError, UsageError

ACTIVATIONS = ("identity", "relu", "tanh")
_ACT_CODE = {name: i for i, name in enumerate(ACTIVATIONS)}

CHECKPOINT_MAGIC = b"SVNC"
CHECKPOINT_VERSION = 1


def ensure_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericsError(f"non-finite values in {what}")


def _apply_activation(name: str, pre: np.ndarray) -> np.ndarray:
    if name == "identity":
        return pre
    if name == "relu":
        return np.maximum(pre, 0.0)
    if name == "tanh":
        return np.tanh(pre)
    raise ConfigError(f"unknown activation {name!r}")


def _activation_deriv(name: str, pre: np.ndarray) -> np.ndarray:
    if name == "identity":
        return np.ones_like(pre)
    if name == "relu":
        # subgradient at 0 is 0
        return (pre > 0.0).astype(np.float64)
    if name == "tanh":
        t = np.tanh(pre)
        return 1.0 - t * t
    raise ConfigError(f"unknown activation {name!r}")


class DenseLayer:
    """y = act(x @ w.T + b) with weights (out, in) and bias (out,)."""

    __slots__ = ("w", "b", "activation")

    def __init__(self, weights, bias, activation: str = "identity"):
        w = np.array(weights, dtype=np.float64)
        b = np.array(bias, dtype=np.float64)
        if w.ndim != 2 or b.ndim != 1 or b.shape[0] != w.shape[0]:
            raise ConfigError(
                f"layer wants weights (out, in) and bias (out,), got {w.shape} and {b.shape}"
            )
        if activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {activation!r}")
        self.w = w
        self.b = b
        self.activation = activation

    @property
    def in_dim(self) -> int:
        return self.w.shape[1]

    @property
    def out_dim(self) -> int:
        return self.w.shape[0]

    @property
    def param_count(self) -> int:
        return self.w.size + self.b.size

    def copy(self) -> "DenseLayer":
        return DenseLayer(self.w.copy(), self.b.copy(), self.activation)


@dataclass
class ForwardCache:
    """Per-layer inputs and preactivations kept for the backward pass."""

    x: np.ndarray
    inputs: list
    pres: list


class Network:
    """An ordered chain of DenseLayers; may be empty (identity map)."""

    __slots__ = ("layers",)

    def __init__(self, layers):
        layers = list(layers)
        for prev, nxt in zip(layers, layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ConfigError(
                    f"layer chain mismatch: {prev.out_dim} -> {nxt.in_dim}"
                )
        self.layers = layers

    @property
    def parameter_count(self) -> int:
        return sum(l.param_count for l in self.layers)

    @property
    def in_dim(self) -> int:
        if not self.layers:
            raise UsageError("empty network has no input dimension")
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        if not self.layers:
            raise UsageError("empty network has no output dimension")
        return self.layers[-1].out_dim

    def copy(self) -> "Network":
        return Network([l.copy() for l in self.layers])

    def forward(self, x: np.ndarray):
        """Run the batch through every layer; returns (output, cache)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2:
            raise ConfigError(f"expected (batch, features) input, got shape {x.shape}")
        if self.layers and x.shape[1] != self.in_dim:
            raise ConfigError(
                f"input has {x.shape[1]} features, network expects {self.in_dim}"
            )
        ensure_finite(x, "network input")
        cache = ForwardCache(x=x, inputs=[], pres=[])
        out = x
        for layer in self.layers:
            cache.inputs.append(out)
            pre = out @ layer.w.T + layer.b
            cache.pres.append(pre)
            out = _apply_activation(layer.activation, pre)
        ensure_finite(out, "network output")
        return out, cache

    def backward(self, cache: ForwardCache, out_grad: np.ndarray):
        """Backprop ``out_grad`` (d loss / d output) through the cached pass.

        Returns (flat parameter gradient, gradient with respect to the input).
        """
        if not isinstance(cache, ForwardCache) or len(cache.inputs) != len(self.layers):
            raise UsageError("backward needs the cache from a matching forward call")
        g = np.asarray(out_grad, dtype=np.float64)
        ensure_finite(g, "output gradient")
        if self.layers and g.shape != (cache.inputs[0].shape[0], self.out_dim):
            raise ConfigError(
                f"output gradient shape {g.shape} does not match forward batch"
            )
        w_grads = [None] * len(self.layers)
        b_grads = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            gpre = g * _activation_deriv(layer.activation, cache.pres[i])
            w_grads[i] = gpre.T @ cache.inputs[i]
            b_grads[i] = gpre.sum(axis=0)
            g = gpre @ layer.w
        if self.layers:
            flat = np.concatenate(
                [np.concatenate([w.ravel(), b]) for w, b in zip(w_grads, b_grads)]
            )
        else:
            flat = np.zeros(0)
        return flat, g

    def flatten_params(self) -> np.ndarray:
        """Parameters as one vector: per layer, row-major weights then bias."""
        if not self.layers:
            return np.zeros(0)
        return np.concatenate(
            [np.concatenate([l.w.ravel(), l.b]) for l in self.layers]
        )

    def unflatten_params(self, flat: np.ndarray) -> None:
        """Load parameters from a flat vector (inverse of flatten_params)."""
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.parameter_count,):
            raise ConfigError(
                f"parameter vector has length {flat.size}, network needs {self.parameter_count}"
            )
        pos = 0
        for layer in self.layers:
            nw = layer.w.size
            layer.w = flat[pos : pos + nw].reshape(layer.w.shape).copy()
            pos += nw
            nb = layer.b.size
            layer.b = flat[pos : pos + nb].copy()
            pos += nb


def new_network(dims, hidden_activation="tanh", output_activation="identity", rng=None) -> Network:
    """Build a network for the dimension chain ``dims``.

    Weights are uniform in +-sqrt(6 / (in + out)), biases zero; pass a seeded
    numpy Generator for reproducible init.
    """
    if rng is None:
        rng = np.random.default_rng()
    dims = list(dims)
    if len(dims) < 2:
        raise ConfigError("need at least input and output dimensions")
    layers = []
    for i, (d_in, d_out) in enumerate(zip(dims, dims[1:])):
        act = output_activation if i == len(dims) - 2 else hidden_activation
        bound = np.sqrt(6.0 / (d_in + d_out))
        w = rng.uniform(-bound, bound, size=(d_out, d_in))
        layers.append(DenseLayer(w, np.zeros(d_out), act))
    return Network(layers)


def softmax_cross_entropy(logits: np.ndarray, labels):
    """Mean softmax cross-entropy and its gradient with respect to logits.

    Gradient rows each sum to zero: (softmax - onehot) / batch.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ConfigError(
            f"logits {logits.shape} and labels {labels.shape} are inconsistent"
        )
    n, k = logits.shape
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise ConfigError(f"labels must lie in [0, {k})")
    ensure_finite(logits, "logits")
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    total = exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(total)
    loss = -log_probs[np.arange(n), labels].mean()
    grad = exp / total
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return float(loss), grad


# --- checkpoint format -------------------------------------------------------
#
# magic "SVNC" | version u32 LE | layer_count u32 LE
# per layer: in_dim u32 LE | out_dim u32 LE | activation_code u8
# then the full parameter vector in flatten_params order, little-endian f64.


def save_network(net: Network, path) -> None:
    """Write the documented flat binary checkpoint."""
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<II", CHECKPOINT_VERSION, len(net.layers))
    for layer in net.layers:
        blob += struct.pack("<IIB", layer.in_dim, layer.out_dim, _ACT_CODE[layer.activation])
    blob += net.flatten_params().astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def load_network(path) -> Network:
    """Read a checkpoint written by save_network; validates every field."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != CHECKPOINT_MAGIC:
        raise IngestError(f"{path}: not a network checkpoint (bad magic at offset 0)")
    version, layer_count = struct.unpack_from("<II", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise IngestError(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    dims = []
    for i in range(layer_count):
        if pos + 9 > len(blob):
            raise IngestError(f"{path}: truncated layer table at offset {pos}")
        d_in, d_out, act_code = struct.unpack_from("<IIB", blob, pos)
        pos += 9
        if act_code >= len(ACTIVATIONS):
            raise IngestError(f"{path}: unknown activation code {act_code}")
        dims.append((d_in, d_out, ACTIVATIONS[act_code]))
    layers = [
        DenseLayer(np.zeros((d_out, d_in)), np.zeros(d_out), act)
        for d_in, d_out, act in dims
    ]
    net = Network(layers)
    want = net.parameter_count * 8
    if len(blob) - pos != want:
        raise IngestError(
            f"{path}: parameter block has {len(blob) - pos} bytes at offset {pos}, expected {want}"
        )
    flat = np.frombuffer(blob, dtype="<f8", count=net.parameter_count, offset=pos)
    net.unflatten_params(flat.astype(np.float64))
    return net
