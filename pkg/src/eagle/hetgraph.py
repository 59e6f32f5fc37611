"""Heterogeneous graph container and meta-path machinery.

Nodes are addressed per type: ``("paper", 17)`` is the 18th paper.  Edges
are stored with the orientation declared in the schema, but every
meta-path computation traverses them in both directions.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DataError, SchemaError

__all__ = [
    "EdgeType",
    "Schema",
    "HetGraph",
    "MetaPath",
    "Instance",
    "typed_adjacency",
    "metapath_adjacency",
    "metapath_neighbors",
    "enumerate_instances",
    "metapath_instances",
    "load_graph",
    "save_graph",
]

DEFAULT_ENUMERATION_LIMIT = 10_000


@dataclass(frozen=True)
class EdgeType:
    name: str
    src: str
    dst: str


class Schema:
    """Registered node and edge types.

    Type ids are positions in ``node_types`` / ``edge_types``.
    """

    def __init__(self, node_types: Sequence[str], edge_types: Sequence[EdgeType | tuple]):
        self.node_types = tuple(node_types)
        self.edge_types = tuple(e if isinstance(e, EdgeType) else EdgeType(*e) for e in edge_types)
        if len(set(self.node_types)) != len(self.node_types):
            raise SchemaError(f"duplicate node type names in {self.node_types}")
        names = [e.name for e in self.edge_types]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate edge type names in {names}")
        for e in self.edge_types:
            for t in (e.src, e.dst):
                if t not in self.node_types:
                    raise SchemaError(f"edge type {e.name!r} refers to unknown node type {t!r}")
        if len(self.node_types) + len(self.edge_types) <= 2:
            raise SchemaError("a heterogeneous graph needs more than two node + edge types in total")
        self._node_ids = {t: i for i, t in enumerate(self.node_types)}
        self._edge_ids = {e.name: i for i, e in enumerate(self.edge_types)}

    def node_type_id(self, name: str) -> int:
        try:
            return self._node_ids[name]
        except KeyError:
            raise SchemaError(f"unknown node type {name!r}") from None

    def edge_type_id(self, name: str) -> int:
        try:
            return self._edge_ids[name]
        except KeyError:
            raise SchemaError(f"unknown edge type {name!r}") from None

    def edge_type(self, name: str) -> EdgeType:
        return self.edge_types[self.edge_type_id(name)]

    def edge_types_between(self, a: str, b: str) -> list[tuple[EdgeType, bool]]:
        """Edge types joining ``a`` and ``b``; the flag is True when stored as b -> a."""
        out = []
        for e in self.edge_types:
            if (e.src, e.dst) == (a, b):
                out.append((e, False))
            elif (e.src, e.dst) == (b, a):
                out.append((e, True))
        return out

    def to_dict(self) -> dict:
        return {
            "node_types": list(self.node_types),
            "edge_types": [[e.name, e.src, e.dst] for e in self.edge_types],
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def __eq__(self, other):
        return isinstance(other, Schema) and self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash(self.digest())

    def __repr__(self):
        edges = ", ".join(f"{e.name}:{e.src}->{e.dst}" for e in self.edge_types)
        return f"Schema(nodes={list(self.node_types)}, edges=[{edges}])"


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


class HetGraph:
    """Typed nodes, typed edge lists and one attribute matrix per node type.

    Instances are treated as immutable: arrays are flagged read-only and
    every transformation returns a new graph.
    """

    def __init__(
        self,
        schema: Schema,
        num_nodes: Mapping[str, int],
        edges: Mapping[str, Iterable] | None = None,
        attrs: Mapping[str, np.ndarray] | None = None,
        names: Mapping[str, Sequence[str]] | None = None,
    ):
        self.schema = schema
        self.num_nodes = {}
        for t in schema.node_types:
            n = int(num_nodes.get(t, 0))
            if n < 0:
                raise DataError(f"negative node count for {t!r}")
            self.num_nodes[t] = n
        for t in num_nodes:
            schema.node_type_id(t)

        edges = dict(edges or {})
        for name in edges:
            schema.edge_type_id(name)
        self.edges = {}
        for e in schema.edge_types:
            arr = np.asarray(edges.get(e.name, np.empty((0, 2))), dtype=np.int64).reshape(-1, 2)
            if arr.size:
                if (arr.min() < 0 or arr[:, 0].max() >= self.num_nodes[e.src]
                        or arr[:, 1].max() >= self.num_nodes[e.dst]):
                    raise DataError(f"edge of type {e.name!r} has an endpoint outside its node type")
                arr = np.unique(arr, axis=0)
            self.edges[e.name] = _readonly(arr)

        attrs = dict(attrs or {})
        self.attrs = {}
        for t in schema.node_types:
            if t in attrs:
                x = np.array(attrs[t], dtype=np.float64)
                if x.ndim != 2 or x.shape[0] != self.num_nodes[t]:
                    raise DataError(
                        f"attribute matrix for {t!r} has shape {x.shape}, expected ({self.num_nodes[t]}, f)"
                    )
            else:
                x = np.zeros((self.num_nodes[t], 0))
            self.attrs[t] = _readonly(x)

        if names is not None:
            self.names = {t: list(names[t]) if t in names else [str(i) for i in range(self.num_nodes[t])]
                          for t in schema.node_types}
            for t, lst in self.names.items():
                if len(lst) != self.num_nodes[t]:
                    raise DataError(f"{len(lst)} names given for {self.num_nodes[t]} nodes of type {t!r}")
        else:
            self.names = None
        self._cache: dict = {}

    # -- basic accessors -------------------------------------------------

    def attr_dim(self, node_type: str) -> int:
        return self.attrs[node_type].shape[1]

    def num_edges(self, edge_type: str | None = None) -> int:
        if edge_type is None:
            return sum(len(v) for v in self.edges.values())
        return len(self.edges[edge_type])

    def node_name(self, node_type: str, idx: int) -> str:
        return self.names[node_type][idx] if self.names else str(idx)

    def __repr__(self):
        nodes = ", ".join(f"{t}={n}" for t, n in self.num_nodes.items())
        edges = ", ".join(f"{k}={len(v)}" for k, v in self.edges.items())
        return f"HetGraph(nodes: {nodes}; edges: {edges})"

    # -- adjacency helpers -----------------------------------------------

    def typed_adjacency(self, edge_type: str) -> sp.csr_matrix:
        return typed_adjacency(self, edge_type)

    def step_matrix(self, a: str, b: str) -> sp.csr_matrix:
        """Binary |a| x |b| matrix joining the two types through any edge type, either orientation."""
        key = ("step", a, b)
        if key not in self._cache:
            links = self.schema.edge_types_between(a, b)
            if not links:
                raise SchemaError(f"no edge type connects {a!r} and {b!r}")
            m = sp.csr_matrix((self.num_nodes[a], self.num_nodes[b]))
            for e, flipped in links:
                adj = typed_adjacency(self, e.name)
                m = m + (adj.T if flipped else adj)
            m = m.tocsr()
            m.data[:] = 1.0
            m.sort_indices()
            self._cache[key] = m
        return self._cache[key]

    def neighbors(self, node_type: str, idx: int) -> list[tuple[str, int]]:
        """Direct (1-hop) neighbours over every edge type, sorted by (type id, index)."""
        out = set()
        for e in self.schema.edge_types:
            arr = self.edges[e.name]
            if e.src == node_type:
                out.update((e.dst, int(j)) for j in arr[arr[:, 0] == idx, 1])
            if e.dst == node_type:
                out.update((e.src, int(j)) for j in arr[arr[:, 1] == idx, 0])
        order = self.schema.node_type_id
        return sorted(out, key=lambda p: (order(p[0]), p[1]))

    # -- transformations -------------------------------------------------

    def with_attrs(self, node_type: str, x: np.ndarray) -> "HetGraph":
        attrs = dict(self.attrs)
        attrs[node_type] = x
        return HetGraph(self.schema, self.num_nodes, self.edges, attrs, self.names)

    def induced(self, keep: Mapping[str, np.ndarray]) -> "HetGraph":
        """Node-induced subgraph; ``keep[t]`` lists retained indices of type t (renumbered in order)."""
        remap = {}
        for t in self.schema.node_types:
            idx = np.sort(np.asarray(keep.get(t, np.arange(self.num_nodes[t])), dtype=np.int64))
            table = np.full(self.num_nodes[t], -1, dtype=np.int64)
            table[idx] = np.arange(len(idx))
            remap[t] = (idx, table)
        edges = {}
        for e in self.schema.edge_types:
            arr = self.edges[e.name]
            s = remap[e.src][1][arr[:, 0]]
            d = remap[e.dst][1][arr[:, 1]]
            ok = (s >= 0) & (d >= 0)
            edges[e.name] = np.stack([s[ok], d[ok]], axis=1)
        attrs = {t: self.attrs[t][remap[t][0]] for t in self.schema.node_types}
        names = None
        if self.names:
            names = {t: [self.names[t][i] for i in remap[t][0]] for t in self.schema.node_types}
        return HetGraph(self.schema, {t: len(remap[t][0]) for t in remap}, edges, attrs, names)


def typed_adjacency(graph: HetGraph, edge_type: str) -> sp.csr_matrix:
    """Binary |src| x |dst| matrix with a one for every stored edge of ``edge_type``."""
    e = graph.schema.edge_type(edge_type)
    arr = graph.edges[e.name]
    m = sp.csr_matrix(
        (np.ones(len(arr)), (arr[:, 0], arr[:, 1])),
        shape=(graph.num_nodes[e.src], graph.num_nodes[e.dst]),
    )
    m.sum_duplicates()
    m.data[:] = 1.0
    return m


@dataclass(frozen=True)
class MetaPath:
    """Ordered node-type sequence such as ``("paper", "author", "paper")``."""

    types: tuple[str, ...]
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "types", tuple(self.types))
        if len(self.types) < 2:
            raise SchemaError("a meta-path needs at least two node types")
        if not self.name:
            object.__setattr__(self, "name", "-".join(self.types))

    @classmethod
    def parse(cls, text: str, schema: Schema | None = None) -> "MetaPath":
        """Parse ``"paper-author-paper"`` or, given a schema, initials like ``"PAP"``."""
        text = text.strip()
        if "-" in text:
            types = tuple(p.strip() for p in text.split("-"))
        elif schema is not None:
            initials = {t[0].upper(): t for t in schema.node_types}
            if len(initials) != len(schema.node_types):
                raise SchemaError("node type initials are ambiguous; spell the meta-path out with '-'")
            try:
                types = tuple(initials[c.upper()] for c in text)
            except KeyError as exc:
                raise SchemaError(f"unknown node type initial {exc.args[0]!r} in {text!r}") from None
        else:
            raise SchemaError(f"cannot parse meta-path {text!r} without a schema")
        path = cls(types, text)
        if schema is not None:
            path.check(schema)
        return path

    @property
    def length(self) -> int:
        return len(self.types) - 1

    @property
    def palindromic(self) -> bool:
        return self.types == self.types[::-1]

    def check(self, schema: Schema) -> None:
        for t in self.types:
            schema.node_type_id(t)
        for a, b in zip(self.types, self.types[1:]):
            if not schema.edge_types_between(a, b):
                raise SchemaError(f"meta-path {self.name!r}: no edge type joins {a!r} and {b!r}")


def metapath_adjacency(graph: HetGraph, path: MetaPath) -> sp.csr_matrix:
    """Square binary meta-path adjacency over the start type, self-loops included."""
    path.check(graph.schema)
    if path.types[0] != path.types[-1]:
        raise SchemaError(f"meta-path {path.name!r} does not return to its start type")
    key = ("mp_adj", path.types)
    if key not in graph._cache:
        m = graph.step_matrix(path.types[0], path.types[1])
        for a, b in zip(path.types[1:], path.types[2:]):
            m = (m @ graph.step_matrix(a, b)).tocsr()
            m.data[:] = 1.0
        m = m.tolil()
        m.setdiag(1.0)
        m = m.tocsr()
        m.eliminate_zeros()
        m.data[:] = 1.0
        m.sort_indices()
        graph._cache[key] = m
    return graph._cache[key].copy()


def metapath_neighbors(graph: HetGraph, path: MetaPath, node: int) -> set[int]:
    n = graph.num_nodes[path.types[0]]
    if not 0 <= node < n:
        raise IndexError(f"node {node} out of range for type {path.types[0]!r} with {n} nodes")
    adj = metapath_adjacency(graph, path)
    return set(adj.indices[adj.indptr[node]:adj.indptr[node + 1]].tolist())


@dataclass(frozen=True)
class Instance:
    """One concrete walk realising a meta-path."""

    path: MetaPath
    walk: tuple[int, ...]

    @property
    def nodes(self) -> frozenset[tuple[str, int]]:
        return frozenset(zip(self.path.types, self.walk))

    def members(self, node_type: str) -> list[int]:
        """Distinct nodes of one type on the walk, in ascending order."""
        return sorted({i for t, i in zip(self.path.types, self.walk) if t == node_type})

    def __contains__(self, item: tuple[str, int]) -> bool:
        return item in self.nodes


def _walks(graph: HetGraph, types: Sequence[str], start: int) -> list[tuple[int, ...]]:
    """All typed walks following ``types`` from ``start`` (inclusive)."""
    walks = [(start,)]
    for a, b in zip(types, types[1:]):
        m = graph.step_matrix(a, b)
        nxt = []
        for w in walks:
            last = w[-1]
            for j in m.indices[m.indptr[last]:m.indptr[last + 1]]:
                nxt.append(w + (int(j),))
        walks = nxt
        if not walks:
            break
    return walks


def _canonical(path: MetaPath, walk: tuple[int, ...]) -> tuple[int, ...]:
    if path.palindromic:
        return min(walk, walk[::-1])
    return walk


def _degenerate(path: MetaPath, walk: tuple[int, ...]) -> bool:
    return path.types[0] == path.types[-1] and walk[0] == walk[-1]


def enumerate_instances(
    graph: HetGraph, path: MetaPath, anchor: int, anchor_type: str | None = None
) -> list[Instance]:
    """Every instance of ``path`` passing through the anchor, in canonical sorted order.

    Walks whose two endpoints coincide are dropped; for palindromic paths a
    walk and its reverse count once.
    """
    anchor_type = anchor_type or path.types[0]
    key = ("inst", path.types, anchor_type, anchor)
    cached = graph._cache.get(key)
    if cached is not None:
        return cached
    path.check(graph.schema)
    n = graph.num_nodes[anchor_type]
    if not 0 <= anchor < n:
        raise IndexError(f"anchor {anchor} out of range for type {anchor_type!r} with {n} nodes")
    found = set()
    for pos, t in enumerate(path.types):
        if t != anchor_type:
            continue
        lefts = _walks(graph, path.types[pos::-1], anchor)
        if not lefts or len(lefts[0]) != pos + 1:
            continue
        rights = _walks(graph, path.types[pos:], anchor)
        if not rights or len(rights[0]) != len(path.types) - pos:
            continue
        for left in lefts:
            head = left[::-1]
            for right in rights:
                walk = head + right[1:]
                if not _degenerate(path, walk):
                    found.add(_canonical(path, walk))
    out = [Instance(path, w) for w in sorted(found)]
    graph._cache[key] = out
    return out


def walk_count_bound(graph: HetGraph, path: MetaPath, anchor: int, anchor_type: str | None = None) -> int:
    """Number of typed walks of ``path`` through the anchor, before dedup and degenerate removal.

    An upper bound on ``len(enumerate_instances(...))`` that costs a few
    sparse vector products, used to decide between enumeration and
    random walks.
    """
    anchor_type = anchor_type or path.types[0]
    key = ("bound", path.types, anchor_type, anchor)
    cached = graph._cache.get(key)
    if cached is not None:
        return cached

    def count(types):
        v = np.zeros(graph.num_nodes[types[0]])
        v[anchor] = 1.0
        for a, b in zip(types, types[1:]):
            v = graph.step_matrix(a, b).T @ v
        return v.sum()

    total = 0.0
    for pos, t in enumerate(path.types):
        if t == anchor_type:
            total += count(path.types[pos::-1]) * count(path.types[pos:])
    graph._cache[key] = out = int(total)
    return out


def _random_instances(graph, path, anchor, anchor_type, max_count, rng, attempts_per_instance=10):
    positions = [i for i, t in enumerate(path.types) if t == anchor_type]
    found: dict[tuple[int, ...], None] = {}
    for _ in range(max_count * attempts_per_instance):
        if len(found) >= max_count:
            break
        pos = positions[rng.integers(len(positions))]
        walk = [anchor]
        ok = True
        for a, b in zip(path.types[pos::-1], path.types[pos - 1::-1] if pos else ()):
            m = graph.step_matrix(a, b)
            row = m.indices[m.indptr[walk[0]]:m.indptr[walk[0] + 1]]
            if not len(row):
                ok = False
                break
            walk.insert(0, int(row[rng.integers(len(row))]))
        if not ok:
            continue
        for a, b in zip(path.types[pos:], path.types[pos + 1:]):
            m = graph.step_matrix(a, b)
            row = m.indices[m.indptr[walk[-1]]:m.indptr[walk[-1] + 1]]
            if not len(row):
                ok = False
                break
            walk.append(int(row[rng.integers(len(row))]))
        if ok and not _degenerate(path, tuple(walk)):
            found.setdefault(_canonical(path, tuple(walk)))
    return [Instance(path, w) for w in found]


def metapath_instances(
    graph: HetGraph,
    path: MetaPath,
    anchor: int,
    max_count: int,
    seed=None,
    anchor_type: str | None = None,
    enumeration_limit: int = DEFAULT_ENUMERATION_LIMIT,
) -> list[Instance]:
    """Sample up to ``max_count`` distinct instances through ``anchor``.

    When at most ``enumeration_limit`` typed walks pass through the anchor
    the instance set is enumerated exactly and sampled uniformly without
    replacement; otherwise type-constrained random walks are used.  Returns ``[]`` when
    no instance exists.
    """
    if max_count < 1:
        raise ValueError("max_count must be >= 1")
    anchor_type = anchor_type or path.types[0]
    rng = np.random.default_rng(seed)
    path.check(graph.schema)
    if not 0 <= anchor < graph.num_nodes[anchor_type]:
        raise IndexError(f"anchor {anchor} out of range for type {anchor_type!r}")
    if walk_count_bound(graph, path, anchor, anchor_type) <= enumeration_limit:
        every = enumerate_instances(graph, path, anchor, anchor_type)
        if len(every) <= max_count:
            return list(every)
        pick = rng.choice(len(every), size=max_count, replace=False)
        return [every[i] for i in pick]
    return _random_instances(graph, path, anchor, anchor_type, max_count, rng)


# -- plain-text graph files ----------------------------------------------

def _data_lines(fh):
    for lineno, line in enumerate(fh, 1):
        s = line.strip()
        if s and not s.startswith("#"):
            yield lineno, s


def load_graph(schema_path, nodes_path, edges_path) -> HetGraph:
    """Read the three-file text format (schema, nodes, edges).

    schema lines:  ``node <type>`` or ``edge <name> <src_type> <dst_type>``
    nodes lines:   ``<type>,<name>,<x1>,<x2>,...``
    edges lines:   ``<edge_type>,<src_name>,<dst_name>``
    """
    node_types, edge_types = [], []
    with open(schema_path, encoding="utf-8") as fh:
        for lineno, s in _data_lines(fh):
            parts = s.split()
            if parts[0] == "node" and len(parts) == 2:
                node_types.append(parts[1])
            elif parts[0] == "edge" and len(parts) == 4:
                edge_types.append(EdgeType(*parts[1:]))
            else:
                raise DataError(f"{schema_path}:{lineno}: cannot parse schema line {s!r}")
    schema = Schema(node_types, edge_types)

    names = {t: [] for t in node_types}
    rows = {t: [] for t in node_types}
    index = {t: {} for t in node_types}
    with open(nodes_path, encoding="utf-8") as fh:
        for lineno, s in _data_lines(fh):
            parts = next(csv.reader([s]))
            if len(parts) < 2:
                raise DataError(f"{nodes_path}:{lineno}: expected 'type,name[,attrs...]'")
            t, name = parts[0].strip(), parts[1].strip()
            if t not in index:
                raise DataError(f"{nodes_path}:{lineno}: unknown node type {t!r}")
            if name in index[t]:
                raise DataError(f"{nodes_path}:{lineno}: duplicate node {t}:{name}")
            try:
                vec = [float(v) for v in parts[2:]]
            except ValueError:
                raise DataError(f"{nodes_path}:{lineno}: non-numeric attribute value") from None
            index[t][name] = len(names[t])
            names[t].append(name)
            rows[t].append(vec)

    attrs = {}
    for t in node_types:
        widths = {len(r) for r in rows[t]}
        if len(widths) > 1:
            raise DataError(f"{nodes_path}: nodes of type {t!r} have inconsistent attribute lengths {sorted(widths)}")
        width = widths.pop() if widths else 0
        attrs[t] = np.array(rows[t], dtype=np.float64).reshape(len(rows[t]), width)

    edges = {e.name: [] for e in schema.edge_types}
    with open(edges_path, encoding="utf-8") as fh:
        for lineno, s in _data_lines(fh):
            parts = [p.strip() for p in s.split(",")]
            if len(parts) != 3:
                raise DataError(f"{edges_path}:{lineno}: expected 'edge_type,src,dst'")
            name, a, b = parts
            if name not in edges:
                raise DataError(f"{edges_path}:{lineno}: unknown edge type {name!r}")
            e = schema.edge_type(name)
            try:
                edges[name].append((index[e.src][a], index[e.dst][b]))
            except KeyError as exc:
                raise DataError(f"{edges_path}:{lineno}: unknown node {exc.args[0]!r}") from None

    return HetGraph(schema, {t: len(names[t]) for t in node_types}, edges, attrs, names)


def save_graph(graph: HetGraph, directory, prefix: str = "") -> tuple[str, str, str]:
    """Write the graph as ``schema.txt``, ``nodes.csv``, ``edges.csv`` under ``directory``."""
    os.makedirs(directory, exist_ok=True)
    paths = tuple(os.path.join(directory, prefix + f) for f in ("schema.txt", "nodes.csv", "edges.csv"))
    with open(paths[0], "w", encoding="utf-8") as fh:
        for t in graph.schema.node_types:
            fh.write(f"node {t}\n")
        for e in graph.schema.edge_types:
            fh.write(f"edge {e.name} {e.src} {e.dst}\n")
    with open(paths[1], "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for t in graph.schema.node_types:
            x = graph.attrs[t]
            for i in range(graph.num_nodes[t]):
                w.writerow([t, graph.node_name(t, i), *(repr(float(v)) for v in x[i])])
    with open(paths[2], "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for e in graph.schema.edge_types:
            for a, b in graph.edges[e.name]:
                w.writerow([e.name, graph.node_name(e.src, a), graph.node_name(e.dst, b)])
    return paths
