"""Bias-free ReLU multilayer perceptron: forward traces, manual backprop, checkpoints.

The model is f(x) = W_L relu(W_{L-1} ... relu(W_1 x)), with no bias terms
anywhere. Biases are excluded by construction (not by configuration): the
homogeneity identity f(x) = J(x)^T x that the jacobian module tests is false
with biases.

Layer indexing convention used throughout: `layers[i]` is the (i+1)-th weight
matrix, `masks[i]`/`preacts[i]` belong to hidden layer i+1, and `acts[0]` is
the input itself.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .tensor import Matrix, Rng, ShapeError, Vector, as_matrix, as_vector

CHECKPOINT_MAGIC = b"JREG"
CHECKPOINT_VERSION = 1


class Activation(Enum):
    RELU = "relu"
    # Reserved: the homogeneity identity also holds for leaky ReLU, but none of
    # the bound constants in this artifact are validated for it.
    LEAKY_RELU = "leaky_relu"


@dataclass
class MlpParams:
    layers: list[Matrix]
    activation: Activation = Activation.RELU

    def __post_init__(self):
        self.layers = [as_matrix(w) for w in self.layers]
        if len(self.layers) < 2:
            raise ShapeError("need at least 2 layers")
        for i in range(1, len(self.layers)):
            if self.layers[i].shape[1] != self.layers[i - 1].shape[0]:
                raise ShapeError(
                    f"layer {i + 1} expects input dim {self.layers[i].shape[1]}, "
                    f"layer {i} outputs {self.layers[i - 1].shape[0]}"
                )
        if self.activation is not Activation.RELU:
            raise NotImplementedError(f"{self.activation} is reserved, not implemented")

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.layers[0].shape[1],) + tuple(w.shape[0] for w in self.layers)

    @property
    def num_params(self) -> int:
        return sum(w.size for w in self.layers)

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.layers], self.activation)


@dataclass
class ForwardTrace:
    preacts: list[Vector]  # hidden pre-activations z_1 .. z_{L-1}
    acts: list[Vector]     # h_0 = x, h_1 .. h_{L-1}
    masks: list[Vector]    # 0/1 ReLU derivative masks m_1 .. m_{L-1}
    logits: Vector


@dataclass
class ParamGrad:
    layers: list[Matrix]


@dataclass
class BatchTrace:
    """Row-stacked forward trace for a whole batch (acts[l] is n x d_l)."""

    acts: list[np.ndarray]
    masks: list[np.ndarray]
    logits: np.ndarray


def forward(params: MlpParams, x: Vector) -> ForwardTrace:
    """Evaluate the network on one input, caching activations and masks."""
    x = as_vector(x)
    if x.shape[0] != params.dims[0]:
        raise ShapeError(f"input dim {x.shape[0]} != {params.dims[0]}")
    preacts, acts, masks = [], [x], []
    h = x
    for w in params.layers[:-1]:
        z = w @ h
        m = (z > 0).astype(np.float64)  # ReLU'(0) = 0 by convention
        h = z * m
        preacts.append(z)
        masks.append(m)
        acts.append(h)
    logits = params.layers[-1] @ h
    return ForwardTrace(preacts=preacts, acts=acts, masks=masks, logits=logits)


def forward_batch(params: MlpParams, xs: np.ndarray) -> BatchTrace:
    """forward() over rows of xs (n x d), exploiting one matmul per layer."""
    xs = np.ascontiguousarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[1] != params.dims[0]:
        raise ShapeError(f"expected n x {params.dims[0]} inputs, got {xs.shape}")
    acts, masks = [xs], []
    a = xs
    for w in params.layers[:-1]:
        z = a @ w.T
        m = (z > 0).astype(np.float64)
        a = z * m
        masks.append(m)
        acts.append(a)
    logits = a @ params.layers[-1].T
    return BatchTrace(acts=acts, masks=masks, logits=logits)


def backprop_loss(params: MlpParams, trace: ForwardTrace, dloss_dlogits: Vector) -> ParamGrad:
    """Gradient of a scalar loss w.r.t. every weight matrix, via the chain rule.

    delta_L = dloss/dlogits, delta_l = m_l * (W_{l+1}^T delta_{l+1}), and the
    layer-l gradient is the outer product delta_l h_{l-1}^T.
    """
    dloss_dlogits = as_vector(dloss_dlogits)
    if dloss_dlogits.shape[0] != params.dims[-1]:
        raise ShapeError(f"dloss dim {dloss_dlogits.shape[0]} != {params.dims[-1]}")
    L = params.depth
    grads: list[Matrix] = [None] * L
    delta = dloss_dlogits
    grads[L - 1] = np.outer(delta, trace.acts[L - 1])
    for i in range(L - 2, -1, -1):
        delta = trace.masks[i] * (params.layers[i + 1].T @ delta)
        grads[i] = np.outer(delta, trace.acts[i])
    return ParamGrad(layers=grads)


def backprop_loss_batch(params: MlpParams, bt: BatchTrace, dlogits: np.ndarray) -> ParamGrad:
    """Sum over the batch of per-sample loss gradients (caller divides by n)."""
    L = params.depth
    grads: list[Matrix] = [None] * L
    delta = dlogits
    grads[L - 1] = delta.T @ bt.acts[L - 1]
    for i in range(L - 2, -1, -1):
        delta = (delta @ params.layers[i + 1]) * bt.masks[i]
        grads[i] = delta.T @ bt.acts[i]
    return ParamGrad(layers=grads)


def input_grad_batch(params: MlpParams, bt: BatchTrace, dlogits: np.ndarray) -> np.ndarray:
    """d(loss)/d(input) for every sample in the batch, shape n x d."""
    delta = dlogits
    for i in range(params.depth - 2, -1, -1):
        delta = (delta @ params.layers[i + 1]) * bt.masks[i]
    return delta @ params.layers[0]


def frobenius_total(params: MlpParams) -> float:
    """sqrt of the summed squared Frobenius norms of all layers."""
    return float(np.sqrt(sum(float((w * w).sum()) for w in params.layers)))


def init_params(dims, rng: Rng, scale_rule: str = "he") -> MlpParams:
    """Fresh parameters; "he" draws N(0, 2/fan_in) entries, "zero" gives the
    all-zeros network."""
    dims = tuple(int(d) for d in dims)
    layers = []
    for i in range(1, len(dims)):
        shape = (dims[i], dims[i - 1])
        if scale_rule == "he":
            layers.append(rng.normal(size=shape, scale=np.sqrt(2.0 / dims[i - 1])))
        elif scale_rule == "zero":
            layers.append(np.zeros(shape))
        else:
            raise ValueError(f"unknown scale_rule {scale_rule!r}")
    return MlpParams(layers)


def save_checkpoint(params: MlpParams, path, rng_id: str = Rng.algorithm, seed: int = 0) -> None:
    """Little-endian binary checkpoint; round-trips bit-exactly.

    Layout: magic "JREG", u32 version, u16 rng-id length + utf-8 rng id,
    u64 seed, u32 L, u32 dims[L+1], then the layer matrices row-major float64.
    """
    rng_bytes = rng_id.encode("utf-8")
    dims = params.dims
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<IH", CHECKPOINT_VERSION, len(rng_bytes)))
        f.write(rng_bytes)
        f.write(struct.pack("<Q", int(seed) & 0xFFFFFFFFFFFFFFFF))
        f.write(struct.pack("<I", params.depth))
        f.write(struct.pack(f"<{len(dims)}I", *dims))
        for w in params.layers:
            f.write(np.ascontiguousarray(w, dtype="<f8").tobytes())


class CheckpointError(ValueError):
    """Malformed or truncated checkpoint file."""


def load_checkpoint(path) -> tuple[MlpParams, str, int]:
    with open(path, "rb") as f:
        raw = f.read()
    off = 0

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(raw):
            raise CheckpointError(f"truncated checkpoint at byte {off} in {path}")
        chunk = raw[off:off + n]
        off += n
        return chunk

    if take(4) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad magic at byte 0 in {path}")
    version, rng_len = struct.unpack("<IH", take(6))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    rng_id = take(rng_len).decode("utf-8")
    (seed,) = struct.unpack("<Q", take(8))
    (depth,) = struct.unpack("<I", take(4))
    dims = struct.unpack(f"<{depth + 1}I", take(4 * (depth + 1)))
    layers = []
    for i in range(1, depth + 1):
        cnt = dims[i] * dims[i - 1]
        w = np.frombuffer(take(8 * cnt), dtype="<f8").reshape(dims[i], dims[i - 1])
        layers.append(w.copy())
    if off != len(raw):
        raise CheckpointError(f"trailing bytes at offset {off} in {path}")
    return MlpParams(layers), rng_id, seed
