"""GCN layers with hand-written backward passes, pooling readouts and Adam.

There is no general autodiff here: each layer records what its backward
pass needs on a :class:`Tape`, and :func:`gcn_backward` pops records in
reverse order.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import TapeError, TrainingDivergence
from .linalg import spmm

ACTIVATIONS = ("relu", "sigmoid", "linear")
READOUTS = ("avg", "min", "max")


def sigmoid(z, out=None):
    """Logistic function; ``out`` may alias ``z`` to work in place.

    exp(-z) overflowing to inf for very negative z yields exactly 0, so
    only the warning is silenced.
    """
    z = np.asarray(z, dtype=np.float64)
    if out is None:
        out = np.empty_like(z)
    with np.errstate(over="ignore"):
        np.negative(z, out=out)
        np.exp(out, out=out)
        out += 1.0
        np.reciprocal(out, out=out)
    return out


def glorot(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


@dataclass
class GcnLayer:
    weight: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        if self.weight.ndim != 2 or min(self.weight.shape) < 1:
            raise ValueError(f"weight must be a non-empty 2-D matrix, got shape {self.weight.shape}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; expected one of {ACTIVATIONS}")

    @classmethod
    def init(cls, in_dim: int, out_dim: int, activation: str, rng: np.random.Generator) -> "GcnLayer":
        return cls(glorot(in_dim, out_dim, rng), activation)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]


@dataclass
class _Record:
    layer: GcnLayer
    weight: np.ndarray
    a_norm: object
    agg: np.ndarray  # a_norm @ h
    pre: np.ndarray  # agg @ W
    out: np.ndarray


@dataclass
class Tape:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def push(self, rec: _Record) -> None:
        self.records.append(rec)

    def pop(self) -> _Record:
        if not self.records:
            raise TapeError("backward called on an empty tape")
        return self.records.pop()


def _activate(pre: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(pre, 0.0)
    if activation == "sigmoid":
        return sigmoid(pre)
    return pre


def _activation_grad(rec: _Record, upstream: np.ndarray) -> np.ndarray:
    act = rec.layer.activation
    if act == "relu":
        return upstream * (rec.pre > 0)
    if act == "sigmoid":
        return upstream * rec.out * (1.0 - rec.out)
    return upstream


def gcn_forward(layer: GcnLayer, h: np.ndarray, a_norm, tape: Tape | None = None) -> np.ndarray:
    """``activation(a_norm @ h @ W)``; pushes a record onto ``tape`` when given."""
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != layer.in_dim:
        raise ValueError(f"input has shape {h.shape}, layer expects (n, {layer.in_dim})")
    if a_norm.shape != (h.shape[0], h.shape[0]):
        raise ValueError(f"adjacency shape {a_norm.shape} does not match {h.shape[0]} input rows")
    agg = spmm(a_norm, h)
    pre = agg @ layer.weight
    out = _activate(pre, layer.activation)
    if tape is not None:
        tape.push(_Record(layer, layer.weight, a_norm, agg, pre, out))
    return out


def gcn_backward(tape: Tape, upstream: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pop the latest record and return ``(grad_W, grad_H)`` for it."""
    rec = tape.pop()
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != rec.out.shape:
        raise TapeError(f"upstream gradient shape {upstream.shape} does not match recorded output {rec.out.shape}")
    if rec.layer.weight is not rec.weight:
        raise TapeError("layer weights were replaced after the forward pass")
    d_pre = _activation_grad(rec, upstream)
    grad_w = rec.agg.T @ d_pre
    # a_norm is symmetric for GCN use, but transpose anyway to stay exact for any input
    grad_h = spmm(rec.a_norm.T, d_pre @ rec.weight.T)
    return grad_w, grad_h


def readout(rows: np.ndarray, mode: str = "avg") -> np.ndarray:
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise ValueError("readout needs at least one row")
    if mode == "avg":
        return rows.mean(axis=0)
    if mode == "min":
        return rows.min(axis=0)
    if mode == "max":
        return rows.max(axis=0)
    raise ValueError(f"unknown readout {mode!r}; expected one of {READOUTS}")


def readout_backward(rows: np.ndarray, mode: str, upstream: np.ndarray) -> np.ndarray:
    """Gradient of ``readout(rows, mode)`` w.r.t. ``rows``; min/max route to the first extremal row."""
    rows = np.asarray(rows, dtype=np.float64)
    if mode == "avg":
        return np.broadcast_to(upstream / rows.shape[0], rows.shape).copy()
    pick = rows.argmax(axis=0) if mode == "max" else rows.argmin(axis=0)
    grad = np.zeros_like(rows)
    grad[pick, np.arange(rows.shape[1])] = upstream
    return grad


class Adam:
    """Adam with bias correction, updating a dict of arrays in place."""

    def __init__(self, params: dict, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict) -> None:
        for k, g in grads.items():
            if g.shape != self.params[k].shape:
                raise ValueError(f"gradient for {k!r} has shape {g.shape}, parameter has {self.params[k].shape}")
            if not np.all(np.isfinite(g)):
                raise TrainingDivergence(f"non-finite gradient for parameter {k!r}")
        self.step_count += 1
        t = self.step_count
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            m_hat = self.m[k] / (1 - self.beta1 ** t)
            v_hat = self.v[k] / (1 - self.beta2 ** t)
            self.params[k] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
