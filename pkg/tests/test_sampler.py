import numpy as np
import pytest

from conftest import APV, PAP, PVP, edge_set, instance_oracle, random_apv_graph
from eagle.hetgraph import HetGraph
from eagle.sampler import PairBatch, PairSampler, sample_negative, sample_positive


@pytest.fixture
def fig_graph():
    """Five papers, two venues: P1 and P2 share V1; P1, P3 and P5 share V2."""
    sizes = {"author": 1, "paper": 5, "venue": 2}
    edges = {"published_in": [(0, 0), (1, 0), (0, 1), (2, 1), (4, 1)]}
    return HetGraph(APV, sizes, edges)


def node_set(pair):
    return {(t, i) for t, i in pair.nodes}


def test_positive_example(fig_graph):
    pos = sample_positive(fig_graph, 0, [PVP], None, seed=0)
    sets = [node_set(p) for p in pos]
    assert {("paper", 0), ("venue", 0), ("paper", 1)} in sets
    assert all(p.positive and ("paper", 0) in p.nodes for p in pos)


def test_negative_example(fig_graph):
    for seed in range(5):
        neg = sample_negative(fig_graph, 0, [PVP], 3, seed=seed)
        assert [node_set(p) for p in neg] == [{("paper", 2), ("venue", 1), ("paper", 4)}]
        assert not neg[0].positive


def test_isolated_target_has_no_pairs(fig_graph):
    assert sample_positive(fig_graph, 3, [PVP, PAP], 4, seed=0) == []
    assert sample_negative(fig_graph, 3, [PVP, PAP], 4, seed=0) == []


def test_negative_needs_neighbours_with_other_edges():
    # paper 0's only neighbour is venue 0, which has no other paper
    g = HetGraph(APV, {"author": 1, "paper": 3, "venue": 2}, {"published_in": [(0, 0), (1, 1), (2, 1)]})
    assert sample_negative(g, 0, [PVP], 5, seed=1) == []


def test_positive_unbounded_is_full_enumeration():
    rng = np.random.default_rng(0)
    for _ in range(15):
        g = random_apv_graph(rng, max_nodes=14)
        for u in range(g.num_nodes["paper"]):
            got = sample_positive(g, u, [PAP, PVP], None, seed=2)
            want = {(p.types, w) for p in (PAP, PVP) for w in instance_oracle(g, p, u, "paper")}
            assert {(p.path.types, p.instance.walk) for p in got} == want


def test_sampled_pairs_satisfy_predicates():
    rng = np.random.default_rng(1)
    for _ in range(20):
        g = random_apv_graph(rng, max_nodes=20)
        edges = edge_set(g)
        for u in range(g.num_nodes["paper"]):
            me = ("paper", u)
            direct = {b for a, b in edges if a == me}
            every = {(p.types, w) for p in (PAP, PVP)
                     for t in ("paper",) for v in range(g.num_nodes[t]) for w in instance_oracle(g, p, v, t)}
            for pr in sample_positive(g, u, [PAP, PVP], 3, seed=u):
                assert me in pr.nodes
                assert (pr.path.types, pr.instance.walk) in every
            for pr in sample_negative(g, u, [PAP, PVP], 3, seed=u):
                assert me not in pr.nodes
                assert pr.nodes & direct
                assert (pr.path.types, pr.instance.walk) in every


def test_round_robin_over_paths():
    rng = np.random.default_rng(3)
    g = random_apv_graph(rng, max_nodes=40, density=0.5)
    pos = sample_positive(g, 0, [PAP, PVP], 4, seed=0)
    kinds = [p.path.types for p in pos]
    if len(pos) == 4:
        assert kinds.count(PAP.types) == 2 and kinds.count(PVP.types) == 2


def test_same_seed_same_samples():
    rng = np.random.default_rng(4)
    g = random_apv_graph(rng, max_nodes=40, density=0.4)
    for u in range(g.num_nodes["paper"]):
        assert sample_positive(g, u, [PAP, PVP], 2, seed=9) == sample_positive(g, u, [PAP, PVP], 2, seed=9)
        assert sample_negative(g, u, [PAP, PVP], 2, seed=9) == sample_negative(g, u, [PAP, PVP], 2, seed=9)


def test_pool_excludes_target(fig_graph):
    pos = sample_positive(fig_graph, 0, [PVP], None, seed=0)
    for p in pos:
        assert 0 not in p.pool_members()
        assert p.pool_members()


def test_pair_batch_layout(fig_graph):
    pairs = sample_positive(fig_graph, 0, [PVP], None, seed=0) + sample_negative(fig_graph, 0, [PVP], 1, seed=0)
    b = PairBatch.from_pairs(pairs, [PVP])
    assert len(b) == len(pairs)
    assert b.labels.tolist() == [1.0] * (len(pairs) - 1) + [0.0]
    np.testing.assert_array_equal(b.segment(len(b) - 1), [2, 4])
    pool = b.pooling_matrix(5).toarray()
    np.testing.assert_allclose(pool.sum(axis=1), 1.0)


def test_pair_sampler_rounds_are_reproducible():
    rng = np.random.default_rng(5)
    g = random_apv_graph(rng, max_nodes=40, density=0.3)
    a = PairSampler(g, [PAP, PVP], "paper", 1, seed=3).round(7)
    b = PairSampler(g, [PAP, PVP], "paper", 1, seed=3).round(7)
    for f in ("targets", "members", "offsets", "labels", "path_ids"):
        np.testing.assert_array_equal(getattr(a, f), getattr(b, f))
    c = PairSampler(g, [PAP, PVP], "paper", 1, seed=3).round(8)
    assert len(a) == 0 or not (np.array_equal(a.members, c.members) and np.array_equal(a.targets, c.targets))


def test_pair_sampler_balanced_labels():
    rng = np.random.default_rng(6)
    g = random_apv_graph(rng, max_nodes=50, density=0.3)
    sampler = PairSampler(g, [PAP, PVP], "paper", 2, seed=0)
    b = sampler.round(0)
    n_pos = int(b.labels.sum())
    assert n_pos >= len(b) - n_pos
    assert n_pos <= 2 * g.num_nodes["paper"]
