"""Contrastive graph autoencoder over meta-path adjacencies.

One two-layer GCN encoder and one attribute decoder per meta-path; the
per-path embeddings are averaged into a single embedding matrix ``H``
which feeds an inner-product structure decoder and a bilinear
discriminator.
"""
from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import CompatibilityError, ConfigError, NonFiniteError
from .hetgraph import HetGraph, MetaPath, metapath_adjacency
from .linalg import frobenius_sq, normalize_adjacency, row_l2
from .nn import READOUTS, GcnLayer, Tape, gcn_backward, gcn_forward, glorot, readout_backward, sigmoid
from .sampler import PairBatch

CHECKPOINT_VERSION = 1
S_CLAMP = 1e-7
# entries of sigmoid(H H^T) held at once while training (about 1 MB)
BLOCK_ELEMS = 1 << 17


@dataclass
class ModelConfig:
    in_dim: int
    n_paths: int
    embed_dim: int = 64
    hidden_dim: int = 64
    alpha: float = 0.8
    beta: float = 0.2
    gamma: float = 0.3
    readout: str = "avg"

    def __post_init__(self):
        if min(self.in_dim, self.n_paths, self.embed_dim, self.hidden_dim) < 1:
            raise ConfigError("dimensions and meta-path count must be >= 1")
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ConfigError("alpha, beta and gamma must be non-negative")
        if self.readout not in READOUTS:
            raise ConfigError(f"readout must be one of {READOUTS}")


class EagleParams:
    """All trainable matrices, keyed by name, plus the model configuration.

    Layers are views over ``arrays`` so an optimiser updating the dict in
    place also updates the layers.
    """

    def __init__(self, config: ModelConfig, arrays: dict[str, np.ndarray]):
        self.config = config
        self.arrays = arrays
        for k, shape in self.expected_shapes(config).items():
            if k not in arrays:
                raise CompatibilityError(f"missing parameter {k!r}")
            if arrays[k].shape != shape:
                raise CompatibilityError(f"parameter {k!r} has shape {arrays[k].shape}, expected {shape}")
            if not np.all(np.isfinite(arrays[k])):
                raise ValueError(f"parameter {k!r} has non-finite entries")

    @staticmethod
    def expected_shapes(c: ModelConfig) -> dict[str, tuple[int, int]]:
        shapes = {}
        for p in range(c.n_paths):
            shapes[f"enc{p}.w1"] = (c.in_dim, c.hidden_dim)
            shapes[f"enc{p}.w2"] = (c.hidden_dim, c.embed_dim)
            shapes[f"dec{p}.w"] = (c.embed_dim, c.in_dim)
        shapes["disc.w"] = (c.embed_dim, c.embed_dim)
        return shapes

    @classmethod
    def init(cls, config: ModelConfig, seed=None) -> "EagleParams":
        rng = np.random.default_rng(seed)
        arrays = {k: glorot(*shape, rng) for k, shape in cls.expected_shapes(config).items()}
        return cls(config, arrays)

    def copy(self) -> "EagleParams":
        return EagleParams(ModelConfig(**asdict(self.config)), {k: v.copy() for k, v in self.arrays.items()})

    def with_weights(self, **overrides) -> "EagleParams":
        """Copy with some hyperparameters replaced (alpha/beta/gamma/readout)."""
        cfg = asdict(self.config)
        cfg.update(overrides)
        return EagleParams(ModelConfig(**cfg), {k: v.copy() for k, v in self.arrays.items()})

    def enc1(self, p: int) -> GcnLayer:
        return GcnLayer(self.arrays[f"enc{p}.w1"], "relu")

    def enc2(self, p: int) -> GcnLayer:
        return GcnLayer(self.arrays[f"enc{p}.w2"], "linear")

    def dec(self, p: int) -> GcnLayer:
        return GcnLayer(self.arrays[f"dec{p}.w"], "relu")

    @property
    def disc(self) -> np.ndarray:
        return self.arrays["disc.w"]


def _is_symmetric(a) -> bool:
    if sp.issparse(a):
        return (a != a.T).nnz == 0
    a = np.asarray(a)
    return bool(np.array_equal(a, a.T))


@dataclass
class GraphTensors:
    """Model inputs for one node type: attributes plus one adjacency per meta-path."""

    x: np.ndarray
    adjs: list
    norm_adjs: list
    dense_adjs: list = field(default_factory=list)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        n = self.x.shape[0]
        for a in self.adjs:
            if a.shape != (n, n):
                raise ValueError(f"adjacency shape {a.shape} does not match {n} nodes")
        if not self.dense_adjs:
            self.dense_adjs = [a.toarray() if sp.issparse(a) else np.asarray(a, dtype=np.float64) for a in self.adjs]
        # sparse sum of the adjacencies and its squared entries, for the expanded structure loss
        self.adj_sum = sp.csr_matrix(sum(sp.csr_matrix(a, dtype=np.float64) for a in self.adjs))
        self.adj_sum.sort_indices()
        self.adj_sq = float(sum((a.data ** 2).sum() if sp.issparse(a) else (a ** 2).sum() for a in self.adjs))
        self.symmetric = all(_is_symmetric(a) for a in self.adjs)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @classmethod
    def from_adjacencies(cls, x, adjs) -> "GraphTensors":
        adjs = [sp.csr_matrix(a, dtype=np.float64) for a in adjs]
        return cls(x, adjs, [normalize_adjacency(a) for a in adjs])

    @classmethod
    def from_graph(cls, graph: HetGraph, target_type: str, paths: Sequence[MetaPath]) -> "GraphTensors":
        for p in paths:
            if p.types[0] != target_type or p.types[-1] != target_type:
                raise ConfigError(f"meta-path {p.name!r} must start and end at {target_type!r}")
        return cls.from_adjacencies(graph.attrs[target_type], [metapath_adjacency(graph, p) for p in paths])


@dataclass
class ForwardOutputs:
    h: np.ndarray
    x_hats: list
    a_hat: np.ndarray
    scores: np.ndarray | None = None
    embeddings: list = field(default_factory=list)


# -- individual operators --------------------------------------------------

def encode(params: EagleParams, x: np.ndarray, norm_adjs: Sequence, tape: Tape | None = None):
    """Two GCN layers per meta-path, averaged into one embedding matrix."""
    if len(norm_adjs) != params.config.n_paths:
        raise ValueError(f"expected {params.config.n_paths} adjacencies, got {len(norm_adjs)}")
    zs = []
    for p, a in enumerate(norm_adjs):
        h1 = gcn_forward(params.enc1(p), x, a, tape)
        zs.append(gcn_forward(params.enc2(p), h1, a, tape))
    return sum(zs) / len(zs), zs


def decode_attr(layer: GcnLayer, h: np.ndarray, norm_adj, tape: Tape | None = None) -> np.ndarray:
    return gcn_forward(layer, h, norm_adj, tape)


def decode_struct(h: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    """Pairwise ``sigmoid(h_i . h_j)``; exactly symmetric.  ``out`` is an optional n x n buffer."""
    h = np.asarray(h, dtype=np.float64)
    if not np.all(np.isfinite(h)):
        raise NonFiniteError("embeddings contain non-finite values")
    # numpy evaluates h @ h.T with a symmetric rank-k update, so q is exactly symmetric
    q = np.matmul(h, h.T, out=out)
    return sigmoid(q, out=q)


def discriminate(w_d: np.ndarray, h_instance: np.ndarray, h_target: np.ndarray) -> float:
    h_instance = np.asarray(h_instance, dtype=np.float64)
    h_target = np.asarray(h_target, dtype=np.float64)
    d = w_d.shape[0]
    if h_instance.shape != (d,) or h_target.shape != (d,):
        raise ValueError(f"expected vectors of length {d}")
    return float(sigmoid(np.array([h_target @ w_d @ h_instance]))[0])


def loss_contrastive(s, y) -> float:
    """Summed binary cross-entropy with scores clamped away from 0 and 1."""
    s = np.clip(np.asarray(s, dtype=np.float64), S_CLAMP, 1 - S_CLAMP)
    y = np.asarray(y, dtype=np.float64)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    if s.size == 0:
        raise ValueError("empty batch")
    return float(-np.sum(y * np.log(s) + (1 - y) * np.log(1 - s)))


def loss_gae(adjs, a_hat, x, x_hats, alpha: float, beta: float) -> float:
    """Weighted squared reconstruction error summed over meta-paths.

    ``a_hat`` may be one matrix shared by all paths or one per path.
    """
    if not isinstance(a_hat, (list, tuple)):
        a_hat = [a_hat] * len(adjs)
    if not isinstance(x_hats, (list, tuple)):
        x_hats = [x_hats]
    struct = sum(frobenius_sq(a, ah) for a, ah in zip(adjs, a_hat))
    attr = sum(frobenius_sq(x, xh) for xh in x_hats)
    return alpha * struct + beta * attr


def loss_total(l_gae: float, l_con: float, gamma: float) -> float:
    return l_gae + gamma * l_con


def pool_instances(h: np.ndarray, batch: PairBatch, mode: str) -> np.ndarray:
    if mode == "avg":
        return np.asarray(batch.pooling_matrix(h.shape[0]) @ h)
    if len(batch) == 0:
        return np.zeros((0, h.shape[1]))
    reduce = np.maximum if mode == "max" else np.minimum
    return reduce.reduceat(h[batch.members], batch.offsets[:-1], axis=0)


def _pool_backward(h, batch: PairBatch, mode: str, d_pooled: np.ndarray) -> np.ndarray:
    if mode == "avg":
        return np.asarray(batch.pooling_matrix(h.shape[0]).T @ d_pooled)
    dh = np.zeros_like(h)
    for k in range(len(batch)):
        seg = batch.segment(k)
        dh[seg] += readout_backward(h[seg], mode, d_pooled[k])
    return dh


def discriminate_batch(params: EagleParams, h: np.ndarray, batch: PairBatch):
    """Scores for every pair in ``batch``; returns (s, logits, target rows, pooled rows)."""
    targets = h[batch.targets]
    pooled = pool_instances(h, batch, params.config.readout)
    logits = np.einsum("kd,kd->k", targets @ params.disc, pooled)
    return sigmoid(logits), logits, targets, pooled


# -- full forward / backward -----------------------------------------------

@dataclass
class LossParts:
    total: float
    gae: float
    contrastive: float
    structure: float
    attribute: float


def forward(params: EagleParams, data: GraphTensors, batch: PairBatch | None = None,
            tape: Tape | None = None) -> ForwardOutputs:
    h, zs = encode(params, data.x, data.norm_adjs, tape)
    x_hats = [decode_attr(params.dec(p), h, a, tape) for p, a in enumerate(data.norm_adjs)]
    a_hat = decode_struct(h)
    scores = None
    if batch is not None and len(batch):
        scores = discriminate_batch(params, h, batch)[0]
    return ForwardOutputs(h, x_hats, a_hat, scores, zs)


def compute_loss(params: EagleParams, data: GraphTensors, batch: PairBatch | None = None) -> LossParts:
    c = params.config
    out = forward(params, data, batch)
    struct = sum(frobenius_sq(a, out.a_hat) for a in data.dense_adjs)
    attr = sum(frobenius_sq(data.x, xh) for xh in out.x_hats)
    l_gae = c.alpha * struct + c.beta * attr
    l_con = loss_contrastive(out.scores, batch.labels) if out.scores is not None else 0.0
    return LossParts(loss_total(l_gae, l_con, c.gamma), l_gae, l_con, struct, attr)


def _structure_blocked(h: np.ndarray, adj_sum: sp.csr_matrix, P: int, block_elems: int = BLOCK_ELEMS):
    """Structure loss without the constant ``sum_p ||A_p||^2``, plus the gradient factor ``M``.

    With ``S = sigmoid(H H^T)`` this returns ``P ||S||^2 - 2 <A_sum, S>`` and
    ``M = (P S*S*(1-S) - A_sum*S*(1-S)) H`` (elementwise products inside).
    ``S`` is symmetric, so only the upper triangle of square tiles is built and
    each off-diagonal tile is used twice.  The sparse terms only need ``S`` at
    the nonzeros of ``A_sum``, which are computed directly.
    """
    if not np.all(np.isfinite(h)):
        raise NonFiniteError("embeddings contain non-finite values")
    n = h.shape[0]
    rows = np.repeat(np.arange(n), np.diff(adj_sum.indptr))
    cols = adj_sum.indices
    s_nz = sigmoid(np.einsum("ij,ij->i", h[rows], h[cols]))
    cross = float(adj_sum.data @ s_nz)
    corr = sp.csr_matrix((adj_sum.data * s_nz * (1.0 - s_nz), cols, adj_sum.indptr), shape=(n, n))

    b = max(1, min(n, int(np.sqrt(block_elems))))
    buf_s, buf_t = np.empty(b * b), np.empty(b * b)
    acc = np.zeros_like(h)
    sq = 0.0
    for i0 in range(0, n, b):
        hi = h[i0:i0 + b]
        for j0 in range(i0, n, b):
            hj = h[j0:j0 + b]
            shape = (len(hi), len(hj))
            s = buf_s[:shape[0] * shape[1]].reshape(shape)
            np.matmul(hi, hj.T, out=s)
            sigmoid(s, out=s)
            flat = s.ravel()
            t = np.subtract(1.0, s, out=buf_t[:flat.size].reshape(shape))
            t *= s
            t *= s
            acc[i0:i0 + b] += t @ hj
            if j0 == i0:
                sq += float(flat @ flat)
            else:
                sq += 2.0 * float(flat @ flat)
                acc[j0:j0 + b] += t.T @ hi
    m = P * acc
    m -= corr @ h
    return sq * P - 2.0 * cross, m


def loss_and_grad(params: EagleParams, data: GraphTensors, batch: PairBatch | None = None):
    """Total loss and its exact gradient for every parameter matrix."""
    c = params.config
    P = c.n_paths
    tape = Tape()
    h, _ = encode(params, data.x, data.norm_adjs, tape)
    x_hats = [decode_attr(params.dec(p), h, a, tape) for p, a in enumerate(data.norm_adjs)]

    # sum_p ||A_p - S||^2 = P ||S||^2 - 2 <sum_p A_p, S> + sum_p ||A_p||^2; the gradient through
    # S = sigmoid(Q) is dL/dQ = 2 alpha (P S - sum_p A_p) * S (1 - S)
    if data.symmetric:
        struct, m = _structure_blocked(h, data.adj_sum, P)
        struct += data.adj_sq
        d_struct = 4.0 * c.alpha * m  # (dL/dQ + dL/dQ^T) H with dL/dQ symmetric
    else:
        a_hat = decode_struct(h)
        struct = sum(frobenius_sq(a, a_hat) for a in data.dense_adjs)
        dq = 2.0 * c.alpha * (P * a_hat - data.adj_sum.toarray()) * a_hat * (1.0 - a_hat)
        d_struct = (dq + dq.T) @ h
    attr = sum(frobenius_sq(data.x, xh) for xh in x_hats)
    l_gae = c.alpha * struct + c.beta * attr

    grads: dict[str, np.ndarray] = {}
    dh = np.zeros_like(h)

    l_con = 0.0
    if batch is not None and len(batch):
        s, _, targets, pooled = discriminate_batch(params, h, batch)
        l_con = loss_contrastive(s, batch.labels)
        dlogit = c.gamma * (s - batch.labels)
        w = params.disc
        grads["disc.w"] = (targets * dlogit[:, None]).T @ pooled
        np.add.at(dh, batch.targets, dlogit[:, None] * (pooled @ w.T))
        dh += _pool_backward(h, batch, c.readout, dlogit[:, None] * (targets @ w))
    else:
        grads["disc.w"] = np.zeros_like(params.disc)

    dh += d_struct

    for p in reversed(range(P)):
        gw, gh = gcn_backward(tape, 2.0 * c.beta * (x_hats[p] - data.x))
        grads[f"dec{p}.w"] = gw
        dh += gh

    dz = dh / P
    for p in reversed(range(P)):
        gw2, gh1 = gcn_backward(tape, dz)
        gw1, _ = gcn_backward(tape, gh1)
        grads[f"enc{p}.w2"] = gw2
        grads[f"enc{p}.w1"] = gw1

    parts = LossParts(loss_total(l_gae, l_con, c.gamma), l_gae, l_con, struct, attr)
    return parts, grads


# -- anomaly scores --------------------------------------------------------

def reconstruction_errors(data: GraphTensors, fwd: ForwardOutputs) -> tuple[np.ndarray, np.ndarray]:
    """Per-node structure and attribute row errors, each averaged over meta-paths."""
    struct = sum(row_l2(a, fwd.a_hat) for a in data.dense_adjs) / len(data.dense_adjs)
    attr = sum(row_l2(data.x, xh) for xh in fwd.x_hats) / len(fwd.x_hats)
    return struct, attr


def anomaly_score(data: GraphTensors, fwd: ForwardOutputs, i: int, s_pos: float, s_neg: float,
                  alpha: float, beta: float, gamma: float) -> float:
    """Score of node ``i``; larger is more anomalous.  NaN discrimination scores count as 0."""
    P = len(data.dense_adjs)
    struct = sum(row_l2(a, fwd.a_hat, i) for a in data.dense_adjs) / P
    attr = sum(row_l2(data.x, xh, i) for xh in fwd.x_hats) / len(fwd.x_hats)
    disc = 0.0 if (np.isnan(s_pos) or np.isnan(s_neg)) else s_neg - s_pos
    return alpha * struct + beta * attr + gamma * disc


def anomaly_scores(params: EagleParams, data: GraphTensors, fwd: ForwardOutputs,
                   s_pos: np.ndarray, s_neg: np.ndarray) -> np.ndarray:
    c = params.config
    struct, attr = reconstruction_errors(data, fwd)
    disc = np.nan_to_num(np.asarray(s_neg) - np.asarray(s_pos), nan=0.0)
    return c.alpha * struct + c.beta * attr + c.gamma * disc


def node_discrimination(params: EagleParams, h: np.ndarray, batches: Sequence[PairBatch], n: int):
    """Mean positive and negative scores per node over several sampling rounds (NaN when unsampled)."""
    pos_sum, pos_cnt = np.zeros(n), np.zeros(n)
    neg_sum, neg_cnt = np.zeros(n), np.zeros(n)
    for b in batches:
        if not len(b):
            continue
        s = discriminate_batch(params, h, b)[0]
        pos = b.labels == 1.0
        np.add.at(pos_sum, b.targets[pos], s[pos])
        np.add.at(pos_cnt, b.targets[pos], 1)
        np.add.at(neg_sum, b.targets[~pos], s[~pos])
        np.add.at(neg_cnt, b.targets[~pos], 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return pos_sum / pos_cnt, neg_sum / neg_cnt


# -- checkpoints -----------------------------------------------------------

def save_checkpoint(path, params: EagleParams, meta: dict | None = None) -> None:
    """Write parameters and metadata to a ``.npz`` container."""
    header = {"format": "eagle-checkpoint", "version": CHECKPOINT_VERSION,
              "config": asdict(params.config), "meta": meta or {}}
    payload = {f"param/{k}": v for k, v in params.arrays.items()}
    payload["header"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **payload)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> tuple[EagleParams, dict]:
    with np.load(path, allow_pickle=False) as z:
        try:
            header = json.loads(bytes(z["header"]).decode())
        except KeyError:
            raise CompatibilityError(f"{path} is not a checkpoint (no header)") from None
        if header.get("format") != "eagle-checkpoint":
            raise CompatibilityError(f"{path} is not a checkpoint")
        if header.get("version") != CHECKPOINT_VERSION:
            raise CompatibilityError(f"unsupported checkpoint version {header.get('version')}")
        arrays = {k[len("param/"):]: z[k].copy() for k in z.files if k.startswith("param/")}
    return EagleParams(ModelConfig(**header["config"]), arrays), header["meta"]
