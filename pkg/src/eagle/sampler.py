"""Meta-path level instance pairs for the contrastive objective.

A positive pair joins a target node with a meta-path instance that passes
through it; a negative pair joins it with an instance that avoids it but
still touches one of its direct neighbours.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .hetgraph import (DEFAULT_ENUMERATION_LIMIT, HetGraph, Instance, MetaPath, enumerate_instances,
                       metapath_instances, walk_count_bound)

log = logging.getLogger(__name__)

NEGATIVE_ATTEMPTS = 50


@dataclass(frozen=True)
class InstancePair:
    target: int
    target_type: str
    instance: Instance
    positive: bool

    @property
    def path(self) -> MetaPath:
        return self.instance.path

    @property
    def label(self) -> float:
        return 1.0 if self.positive else 0.0

    @property
    def nodes(self) -> frozenset:
        return self.instance.nodes

    def pool_members(self) -> list[int]:
        """Nodes of the target type whose embeddings are pooled; the target itself is left out."""
        return [i for i in self.instance.members(self.target_type) if i != self.target]


def _instances(graph, path, anchor, anchor_type, rng, limit):
    if walk_count_bound(graph, path, anchor, anchor_type) <= limit:
        return enumerate_instances(graph, path, anchor, anchor_type)
    return metapath_instances(graph, path, anchor, 64, rng, anchor_type, limit)


def sample_positive(
    graph: HetGraph,
    target: int,
    paths: Sequence[MetaPath],
    n: int | None,
    seed=None,
    target_type: str | None = None,
    enumeration_limit: int = DEFAULT_ENUMERATION_LIMIT,
) -> list[InstancePair]:
    """Up to ``n`` distinct instances through ``target``, cycling over ``paths``.

    ``n=None`` returns every instance of every path.  An empty list means
    the target lies on no instance at all.
    """
    target_type = target_type or paths[0].types[0]
    rng = np.random.default_rng(seed)
    pools = []
    for p in paths:
        every = list(_instances(graph, p, target, target_type, rng, enumeration_limit))
        order = rng.permutation(len(every))
        pools.append([every[i] for i in order])
    if n is None:
        return [InstancePair(target, target_type, inst, True) for pool in pools for inst in pool]
    out = []
    cursor = [0] * len(pools)
    while len(out) < n and any(c < len(pool) for c, pool in zip(cursor, pools)):
        for k, pool in enumerate(pools):
            if len(out) >= n:
                break
            if cursor[k] < len(pool):
                out.append(InstancePair(target, target_type, pool[cursor[k]], True))
                cursor[k] += 1
    if not out:
        log.debug("no positive instance for %s %d", target_type, target)
    return out


def sample_negative(
    graph: HetGraph,
    target: int,
    paths: Sequence[MetaPath],
    n: int,
    seed=None,
    target_type: str | None = None,
    max_attempts: int = NEGATIVE_ATTEMPTS,
    enumeration_limit: int = DEFAULT_ENUMERATION_LIMIT,
) -> list[InstancePair]:
    """Up to ``n`` instances that exclude ``target`` but contain one of its direct neighbours.

    Candidates are drawn by picking a random direct neighbour, then a random
    instance through it, and rejected when they contain the target.  Each
    slot gives up after ``max_attempts`` draws.
    """
    target_type = target_type or paths[0].types[0]
    rng = np.random.default_rng(seed)
    nbrs = graph.neighbors(target_type, target)
    me = (target_type, target)
    out, seen = [], set()
    for slot in range(n):
        path = paths[slot % len(paths)]
        usable = [nb for nb in nbrs if nb[0] in path.types]
        if not usable:
            continue
        for _ in range(max_attempts):
            t, w = usable[rng.integers(len(usable))]
            cands = _instances(graph, path, w, t, rng, enumeration_limit)
            if not cands:
                continue
            inst = cands[rng.integers(len(cands))]
            if me in inst.nodes or inst in seen:
                continue
            seen.add(inst)
            out.append(InstancePair(target, target_type, inst, False))
            break
    if not out:
        log.debug("no negative instance for %s %d", target_type, target)
    return out


@dataclass
class PairBatch:
    """Flat arrays describing a batch of pairs for the model.

    Pair ``k`` pools rows ``members[offsets[k]:offsets[k+1]]`` of the
    embedding matrix and compares them with row ``targets[k]``.
    """

    targets: np.ndarray
    members: np.ndarray
    offsets: np.ndarray
    labels: np.ndarray
    path_ids: np.ndarray

    def __len__(self):
        return len(self.targets)

    @classmethod
    def from_pairs(cls, pairs: Sequence[InstancePair], paths: Sequence[MetaPath] = ()) -> "PairBatch":
        path_index = {p.types: i for i, p in enumerate(paths)}
        targets, members, offsets, labels, pids = [], [], [0], [], []
        for pr in pairs:
            pool = pr.pool_members()
            if not pool:
                continue
            targets.append(pr.target)
            members.extend(pool)
            offsets.append(len(members))
            labels.append(pr.label)
            pids.append(path_index.get(pr.path.types, -1))
        return cls(
            np.asarray(targets, dtype=np.int64),
            np.asarray(members, dtype=np.int64),
            np.asarray(offsets, dtype=np.int64),
            np.asarray(labels, dtype=np.float64),
            np.asarray(pids, dtype=np.int64),
        )

    def sizes(self) -> np.ndarray:
        return np.diff(self.offsets)

    def pooling_matrix(self, n: int) -> sp.csr_matrix:
        """K x n matrix whose product with H gives the average-pooled instance embeddings."""
        sizes = self.sizes()
        return sp.csr_matrix(
            (np.repeat(1.0 / np.maximum(sizes, 1), sizes), self.members, self.offsets),
            shape=(len(self.targets), n),
        )

    def segment(self, k: int) -> np.ndarray:
        return self.members[self.offsets[k]:self.offsets[k + 1]]


class PairSampler:
    """Draws one round of positive and negative pairs for every target node.

    Each node gets ``pairs_per_node`` positives and as many negatives per
    round; the meta-path used rotates with node index and round so that
    all paths are covered.  Rounds are reproducible from ``(seed, round)``.
    """

    def __init__(
        self,
        graph: HetGraph,
        paths: Sequence[MetaPath],
        target_type: str | None = None,
        pairs_per_node: int = 1,
        seed: int = 0,
        enumeration_limit: int = DEFAULT_ENUMERATION_LIMIT,
    ):
        self.graph = graph
        self.paths = list(paths)
        self.target_type = target_type or self.paths[0].types[0]
        self.pairs_per_node = pairs_per_node
        self.seed = seed
        self.enumeration_limit = enumeration_limit
        self.n = graph.num_nodes[self.target_type]
        self.missing_positive: set[int] = set()
        self.missing_negative: set[int] = set()

    def round(self, r: int) -> PairBatch:
        rng = np.random.default_rng([self.seed, r])
        pairs = []
        n_paths = len(self.paths)
        for u in range(self.n):
            for j in range(self.pairs_per_node):
                first = (u + r + j) % n_paths
                order = self.paths[first:] + self.paths[:first]
                pos = sample_positive(self.graph, u, order, 1, rng, self.target_type, self.enumeration_limit)
                if not pos:
                    self.missing_positive.add(u)
                    continue
                pairs.extend(pos)
                # negative from the same template as its positive
                neg = sample_negative(self.graph, u, [pos[0].path], 1, rng, self.target_type,
                                      enumeration_limit=self.enumeration_limit)
                if neg:
                    pairs.extend(neg)
                else:
                    self.missing_negative.add(u)
        return PairBatch.from_pairs(pairs, self.paths)
