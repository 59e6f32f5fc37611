"""Synthetic community-structured heterogeneous graphs and contextual anomaly injection."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .hetgraph import EdgeType, HetGraph, Schema


@dataclass
class SynthSchema:
    """Recipe for :func:`generate_synthetic`.

    ``edges`` maps an edge type name to ``(src_type, dst_type, count)``.
    Every edge is drawn from the endpoint type with more nodes (cycling over
    it, so each of its nodes gets at least ``count // size`` edges) to a
    partner of the other type, chosen inside the same community with
    probability ``intra``.

    Attributes are ``attr_scale * (coherence * center + (1 - coherence) * noise)``
    with per-community centres and noise drawn uniformly from ``[0, 1)``; a
    fraction ``sparsity`` of centre entries is zeroed to mimic bag-of-words
    vectors.  Types listed in ``featureless`` get no attributes.
    """

    nodes: dict[str, int]
    edges: dict[str, tuple[str, str, int]]
    communities: int = 8
    attr_dim: int = 64
    coherence: float = 0.8
    intra: float = 0.9
    sparsity: float = 0.5
    featureless: tuple[str, ...] = ()
    attr_scale: float = 1.0

    def validate(self) -> None:
        if self.communities < 1:
            raise ConfigError("need at least one community")
        if self.attr_dim < 1:
            raise ConfigError("attribute dimension must be >= 1")
        if not 0.0 <= self.coherence <= 1.0:
            raise ConfigError("coherence must lie in [0, 1]")
        if not 0.0 <= self.intra <= 1.0:
            raise ConfigError("intra must lie in [0, 1]")
        if not 0.0 <= self.sparsity < 1.0:
            raise ConfigError("sparsity must lie in [0, 1)")
        if self.attr_scale <= 0:
            raise ConfigError("attr_scale must be positive")
        for t, n in self.nodes.items():
            if n < 1:
                raise ConfigError(f"node type {t!r} needs at least one node")
        for name, (a, b, count) in self.edges.items():
            if a not in self.nodes or b not in self.nodes:
                raise ConfigError(f"edge type {name!r} refers to an undeclared node type")
            if count < 0:
                raise ConfigError(f"edge count for {name!r} is negative")

    def schema(self) -> Schema:
        return Schema(list(self.nodes), [EdgeType(k, a, b) for k, (a, b, _) in self.edges.items()])

    def scaled(self, factor: float) -> "SynthSchema":
        """Same recipe with every node and edge count multiplied by ``factor``."""
        return SynthSchema(
            {t: max(1, round(n * factor)) for t, n in self.nodes.items()},
            {k: (a, b, max(0, round(c * factor))) for k, (a, b, c) in self.edges.items()},
            self.communities, self.attr_dim, self.coherence, self.intra, self.sparsity, self.featureless,
            self.attr_scale,
        )


# Roughly 1/10 of the author/paper/venue citation dataset and of the
# user/business/review dataset.  Counts are scale guidance, not fits.
PRESETS = {
    "dblp": SynthSchema(
        nodes={"author": 1000, "paper": 360, "venue": 46},
        edges={"writes": ("author", "paper", 1312), "published_in": ("paper", "venue", 360)},
        attr_dim=128, attr_scale=2.0,
    ),
    "aminer": SynthSchema(
        nodes={"author": 1994, "paper": 761, "venue": 86},
        edges={"writes": ("author", "paper", 2194), "published_in": ("paper", "venue", 761)},
        attr_dim=128, attr_scale=2.0,
    ),
    "yelp": SynthSchema(
        nodes={"user": 289, "business": 1027, "review": 1288},
        edges={"rates": ("user", "business", 1246), "reviewed_by": ("business", "review", 1288)},
    ),
}

# target node type and meta-paths used with each preset
PRESET_TARGETS = {
    "dblp": ("paper", ["paper-author-paper", "paper-venue-paper"]),
    "aminer": ("paper", ["paper-author-paper", "paper-venue-paper"]),
    # every review has one business, so business-review-business carries no instances
    "yelp": ("business", ["business-user-business"]),
}

# anomalies / total nodes in the full-size datasets
PRESET_ANOMALY_SHARE = {"dblp": 150 / 14275, "aminer": 300 / 28407, "yelp": 450 / 26044}


def preset(name: str) -> SynthSchema:
    try:
        s = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return SynthSchema(dict(s.nodes), dict(s.edges), s.communities, s.attr_dim, s.coherence,
                       s.intra, s.sparsity, s.featureless, s.attr_scale)


def generate_synthetic(schema: SynthSchema, seed=None) -> HetGraph:
    schema.validate()
    rng = np.random.default_rng(seed)
    K = schema.communities
    comm = {t: rng.integers(K, size=n) for t, n in schema.nodes.items()}
    members = {t: [np.flatnonzero(c == k) for k in range(K)] for t, c in comm.items()}

    edges = {}
    for name, (a, b, count) in schema.edges.items():
        big, small = (a, b) if schema.nodes[a] >= schema.nodes[b] else (b, a)
        n_big, n_small = schema.nodes[big], schema.nodes[small]
        drivers = np.concatenate([rng.permutation(n_big) for _ in range(-(-count // n_big))])[:count] if count else []
        pairs = []
        for u in drivers:
            pool = members[small][comm[big][u]]
            if len(pool) and rng.random() < schema.intra:
                v = pool[rng.integers(len(pool))]
            else:
                v = rng.integers(n_small)
            pairs.append((u, v) if big == a else (v, u))
        edges[name] = np.array(pairs, dtype=np.int64).reshape(-1, 2)

    attrs = {}
    for t, n in schema.nodes.items():
        if t in schema.featureless:
            continue
        centers = rng.random((K, schema.attr_dim))
        centers[rng.random(centers.shape) < schema.sparsity] = 0.0
        noise = rng.random((n, schema.attr_dim))
        attrs[t] = schema.attr_scale * (schema.coherence * centers[comm[t]] + (1.0 - schema.coherence) * noise)

    return HetGraph(schema.schema(), schema.nodes, edges, attrs)


@dataclass
class InjectionRecord:
    node_type: str
    anomalies: np.ndarray
    sources: np.ndarray
    candidates: list = field(default_factory=list)
    k: int = 50
    seed: object = None

    def labels(self, n: int) -> np.ndarray:
        y = np.zeros(n, dtype=np.int64)
        y[self.anomalies] = 1
        return y


def inject_contextual(graph: HetGraph, target_type: str, count: int, k: int = 50, seed=None):
    """Copy far-away attribute rows onto ``count`` randomly chosen nodes.

    For each target, ``k`` candidates of the same type are drawn without
    replacement (never the target, never a node injected before it); the
    target's attribute row is overwritten by the candidate's row at the
    largest Euclidean distance, ties going to the lowest candidate index.
    Returns the new graph and an :class:`InjectionRecord`; the input graph
    is not modified.
    """
    graph.schema.node_type_id(target_type)
    n = graph.num_nodes[target_type]
    if k < 1:
        raise ConfigError("k must be >= 1")
    if count < 0 or count > n:
        raise ConfigError(f"cannot inject {count} anomalies into {n} nodes of type {target_type!r}")
    rng = np.random.default_rng(seed)
    x = graph.attrs[target_type].copy()
    targets = np.sort(rng.choice(n, size=count, replace=False))
    excluded = np.zeros(n, dtype=bool)
    sources, cand_log = [], []
    for u in targets:
        excluded[u] = True
        pool = np.flatnonzero(~excluded)
        if len(pool) == 0:
            raise ConfigError("no non-anomalous candidates left to copy attributes from")
        cands = np.sort(rng.choice(pool, size=min(k, len(pool)), replace=False))
        dist = np.linalg.norm(graph.attrs[target_type][cands] - graph.attrs[target_type][u], axis=1)
        src = int(cands[np.argmax(dist)])  # argmax returns the first maximum, i.e. the lowest index
        x[u] = graph.attrs[target_type][src]
        sources.append(src)
        cand_log.append(cands)
    out = graph.with_attrs(target_type, x)
    record = InjectionRecord(target_type, targets, np.asarray(sources, dtype=np.int64), cand_log, k, seed)
    return out, record


def verify_injection(before: HetGraph, after: HetGraph, record: InjectionRecord) -> list[str]:
    """Replay check; returns a list of problems (empty when the injection is consistent)."""
    problems = []
    t = record.node_type
    x0, x1 = before.attrs[t], after.attrs[t]
    changed = np.flatnonzero(np.any(x0 != x1, axis=1))
    if not set(changed.tolist()) <= set(record.anomalies.tolist()):
        problems.append(f"rows changed outside the anomaly set: {sorted(set(changed) - set(record.anomalies))}")
    for u, src, cands in zip(record.anomalies, record.sources, record.candidates):
        if src == u:
            problems.append(f"node {u} copied from itself")
        earlier = record.anomalies[:list(record.anomalies).index(u) + 1]
        if np.any(np.isin(cands, earlier)):
            problems.append(f"candidate set of node {u} includes itself or an earlier anomaly")
        d = np.sqrt(((x0[cands] - x0[u]) ** 2).sum(axis=1))
        best = cands[np.flatnonzero(d == d.max())[0]]
        if best != src:
            problems.append(f"node {u}: recorded source {src} is not the farthest candidate {best}")
        if not np.array_equal(x1[u], x0[src]):
            problems.append(f"node {u}: attributes are not a copy of node {src}")
    for name in before.edges:
        if not np.array_equal(before.edges[name], after.edges[name]):
            problems.append(f"edges of type {name!r} changed")
    for other in before.schema.node_types:
        if other != t and not np.array_equal(before.attrs[other], after.attrs[other]):
            problems.append(f"attributes of type {other!r} changed")
    return problems


def write_labels(path, record: InjectionRecord, n: int) -> None:
    y = record.labels(n)
    with open(path, "w", encoding="utf-8") as fh:
        for i, v in enumerate(y):
            fh.write(f"{i},{v}\n")


def read_labels(path) -> np.ndarray:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            s = line.strip()
            if s and not s.startswith("#"):
                i, v = s.split(",")
                rows.append((int(i), int(v)))
    y = np.zeros(len(rows), dtype=np.int64)
    for i, v in rows:
        y[i] = v
    return y
