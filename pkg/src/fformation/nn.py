"""Small dense-network engine: layers, masked max-pool, log loss, Adam.

Everything works on float64 arrays with arbitrary leading batch dimensions.
Backward passes are written by hand for the fixed topologies used in this
package; there is no general autodiff.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

ACTIVATIONS = ("relu", "sigmoid", "identity")
LOSS_EPS = 1e-7


class ShapeError(ValueError):
    pass


class UsageError(RuntimeError):
    pass


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray  # (out_dim,)
    activation: str = "relu"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"inconsistent layer shapes: weights {self.weights.shape}, bias {self.bias.shape}"
            )

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def init(cls, in_dim: int, out_dim: int, activation: str, rng: np.random.Generator):
        """Uniform fan-in/fan-out initialisation, zero bias."""
        limit = np.sqrt(6.0 / (in_dim + out_dim))
        w = rng.uniform(-limit, limit, size=(out_dim, in_dim))
        return cls(w, np.zeros(out_dim), activation)


def sigmoid(z):
    # split by sign so exp never overflows
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _activate(z, activation):
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "sigmoid":
        return sigmoid(z)
    return z


def dense_forward(layer: DenseLayer, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != layer.in_dim:
        raise ShapeError(f"expected input width {layer.in_dim}, got {x.shape[-1]}")
    return _activate(x @ layer.weights.T + layer.bias, layer.activation)


def mlp_apply(layers: Sequence[DenseLayer], x) -> np.ndarray:
    """Forward pass without keeping intermediates (safe for concurrent use)."""
    h = np.asarray(x, dtype=np.float64)
    for layer in layers:
        h = dense_forward(layer, h)
    return h


def mlp_forward(layers: Sequence[DenseLayer], x):
    """Forward pass returning ``(output, cache)`` for :func:`mlp_backward`."""
    h = np.asarray(x, dtype=np.float64)
    inputs, outputs = [], []
    for layer in layers:
        inputs.append(h)
        h = dense_forward(layer, h)
        outputs.append(h)
    return h, (inputs, outputs)


def mlp_backward(layers: Sequence[DenseLayer], cache, grad_out, logit_grad=False):
    """Backpropagate ``grad_out`` (dL/d output) through the layers.

    With ``logit_grad`` the gradient is taken to be with respect to the last
    layer's pre-activation, which is how a sigmoid head is paired with log
    loss without dividing by p(1 - p).

    Returns ``(grads, grad_input)`` where ``grads`` is a list of
    ``(dW, db)`` pairs aligned with ``layers``. Leading batch dimensions are
    summed out of the parameter gradients.
    """
    if cache is None:
        raise UsageError("backward called without a cached forward pass")
    inputs, outputs = cache
    g = np.asarray(grad_out, dtype=np.float64)
    grads = [None] * len(layers)
    for k in range(len(layers) - 1, -1, -1):
        layer, x, y = layers[k], inputs[k], outputs[k]
        if logit_grad and k == len(layers) - 1:
            pass
        elif layer.activation == "relu":
            g = g * (y > 0)
        elif layer.activation == "sigmoid":
            g = g * y * (1.0 - y)
        g2 = g.reshape(-1, layer.out_dim)
        x2 = x.reshape(-1, layer.in_dim)
        grads[k] = (g2.T @ x2, g2.sum(axis=0))
        g = g @ layer.weights
    return grads, g


def masked_max_pool(rows, mask):
    """Column-wise max over the rows whose mask entry is true.

    Works on ``(M, d)`` with mask ``(M,)`` or batched ``(B, M, d)`` with mask
    ``(B, M)``. Sets with no active row pool to the zero vector. Returns
    ``(pooled, argmax)``; ``argmax`` holds the winning row per column (lowest
    index on ties) and -1 where nothing was active.
    """
    rows = np.asarray(rows, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if rows.shape[-2] == 0:
        shape = rows.shape[:-2] + rows.shape[-1:]
        return np.zeros(shape), np.full(shape, -1, dtype=np.int64)
    masked = np.where(mask[..., None], rows, -np.inf)
    arg = np.argmax(masked, axis=-2)
    pooled = np.take_along_axis(masked, arg[..., None, :], axis=-2)[..., 0, :]
    empty = ~mask.any(axis=-1)
    pooled[empty] = 0.0
    arg[empty] = -1
    return pooled, arg


def max_pool_backward(grad_pooled, argmax, n_rows: int):
    """Route pooled gradients to the winning rows; everything else gets zero."""
    grad_pooled = np.asarray(grad_pooled, dtype=np.float64)
    batch_shape = grad_pooled.shape[:-1]
    d = grad_pooled.shape[-1]
    out = np.zeros(batch_shape + (n_rows + 1, d))
    # -1 (empty set) lands in the scratch row at index n_rows
    idx = np.where(argmax < 0, n_rows, argmax)
    np.put_along_axis(out, idx[..., None, :], grad_pooled[..., None, :], axis=-2)
    return out[..., :n_rows, :]


def bce_loss(prediction, label):
    p = np.clip(np.asarray(prediction, dtype=np.float64), LOSS_EPS, 1.0 - LOSS_EPS)
    y = np.asarray(label, dtype=np.float64)
    return -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))


def bce_grad_logit(prediction, label):
    """d bce_loss / d logit for a sigmoid output; zero where the clamp is active."""
    p = np.asarray(prediction, dtype=np.float64)
    y = np.asarray(label, dtype=np.float64)
    inside = (p > LOSS_EPS) & (p < 1.0 - LOSS_EPS)
    return np.where(inside, p - y, 0.0)


@dataclass
class AdamState:
    first_moment: list
    second_moment: list
    step_count: int = 0
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, params, **kwargs):
        return cls(
            [np.zeros_like(p) for p in params],
            [np.zeros_like(p) for p in params],
            **kwargs,
        )


def adam_step(params, grads, state: AdamState):
    """One Adam update with bias correction; arrays in ``params`` are updated in place."""
    if not (len(params) == len(grads) == len(state.first_moment) == len(state.second_moment)):
        raise ShapeError("params, grads and optimiser state lengths differ")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"shape mismatch: param {p.shape}, grad {g.shape}, moment {m.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return params, state


# ---------------------------------------------------------------------------
# checkpoint archive
#
# layout: magic line, one JSON header line, then raw little-endian float64
# tensors back to back in row-major order. The header lists every tensor's
# name and shape, so the archive is self-describing and byte-deterministic.

MAGIC = b"FFORMATION-CKPT 1\n"


def save_archive(path, header: dict, tensors: dict) -> None:
    entries = []
    for name, arr in tensors.items():
        entries.append({"name": name, "shape": list(np.shape(arr))})
    head = dict(header)
    head["tensors"] = entries
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(head, sort_keys=True).encode("utf-8") + b"\n")
        for arr in tensors.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_archive(path):
    """Return ``(header, tensors)``; raises ``ValueError`` on a corrupt file."""
    with open(path, "rb") as fh:
        if fh.readline() != MAGIC:
            raise ValueError(f"{path}: not a checkpoint archive")
        header = json.loads(fh.readline().decode("utf-8"))
        payload = fh.read()
    tensors = {}
    offset = 0
    for entry in header.pop("tensors"):
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        nbytes = 8 * n
        if offset + nbytes > len(payload):
            raise ValueError(f"{path}: truncated tensor {entry['name']}")
        tensors[entry["name"]] = (
            np.frombuffer(payload, dtype="<f8", count=n, offset=offset).reshape(shape).astype(np.float64)
        )
        offset += nbytes
    if offset != len(payload):
        raise ValueError(f"{path}: {len(payload) - offset} trailing bytes")
    return header, tensors
