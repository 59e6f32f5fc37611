import numpy as np
import pytest

from conftest import (APA, APV, PAP, PVP, instance_oracle, random_apv_graph, walk_dfs_adjacency,
                      walk_oracle_adjacency)
from eagle.errors import DataError, SchemaError
from eagle.hetgraph import (EdgeType, HetGraph, MetaPath, Schema, enumerate_instances, load_graph, metapath_adjacency,
                            metapath_instances, metapath_neighbors, save_graph, typed_adjacency)


def test_schema_rejects_too_few_types():
    with pytest.raises(SchemaError):
        Schema(["a", "b"], [])
    with pytest.raises(SchemaError):
        Schema(["a"], [EdgeType("r", "a", "a")])


def test_schema_rejects_unknown_endpoint_and_duplicates():
    with pytest.raises(SchemaError):
        Schema(["a", "b"], [EdgeType("r", "a", "c")])
    with pytest.raises(SchemaError):
        Schema(["a", "a"], [EdgeType("r", "a", "a")])


def test_edges_must_index_valid_nodes():
    with pytest.raises(DataError):
        HetGraph(APV, {"author": 2, "paper": 2, "venue": 1}, {"writes": [(2, 0)]})


def test_attribute_rows_must_match_node_count():
    with pytest.raises(DataError):
        HetGraph(APV, {"author": 2, "paper": 2, "venue": 1}, {}, {"paper": np.zeros((3, 2))})


def test_typed_adjacency_toy(toy_graph):
    w = typed_adjacency(toy_graph, "writes").toarray()
    # the second author writes the first two papers
    np.testing.assert_array_equal(w[1], [1, 1, 0, 0])
    assert w.shape == (3, 4)


def test_typed_adjacency_empty():
    g = HetGraph(APV, {"author": 3, "paper": 2, "venue": 1})
    assert typed_adjacency(g, "writes").nnz == 0
    assert typed_adjacency(g, "writes").shape == (3, 2)


def test_typed_adjacency_unknown_type(toy_graph):
    with pytest.raises(SchemaError):
        typed_adjacency(toy_graph, "cites")


def test_typed_adjacency_matches_edge_scan():
    rng = np.random.default_rng(3)
    for _ in range(20):
        g = random_apv_graph(rng, max_nodes=10)
        m = typed_adjacency(g, "writes").toarray()
        listed = {tuple(e) for e in g.edges["writes"].tolist()}
        for i in range(m.shape[0]):
            for j in range(m.shape[1]):
                assert m[i, j] == ((i, j) in listed)


def test_metapath_neighbors_include_self(toy_graph):
    # A-P-A neighbours of the second author: itself and the co-author of the first paper
    assert metapath_neighbors(toy_graph, APA, 1) == {0, 1}


def test_no_edges_gives_identity():
    g = HetGraph(APV, {"author": 4, "paper": 3, "venue": 2})
    np.testing.assert_array_equal(metapath_adjacency(g, PAP).toarray(), np.eye(3))
    assert metapath_neighbors(g, PVP, 2) == {2}


def test_metapath_adjacency_matches_walk_oracle():
    rng = np.random.default_rng(11)
    for _ in range(30):
        g = random_apv_graph(rng, max_nodes=30)
        for path in (PAP, PVP, APA):
            np.testing.assert_array_equal(metapath_adjacency(g, path).toarray(), walk_oracle_adjacency(g, path))


def test_dfs_walk_oracle_agrees_with_tuple_product():
    rng = np.random.default_rng(11)
    for _ in range(20):
        g = random_apv_graph(rng, max_nodes=20)
        for path in (PAP, PVP, APA):
            assert np.array_equal(walk_dfs_adjacency(g, path), walk_oracle_adjacency(g, path))


def test_metapath_adjacency_symmetric_with_unit_diagonal():
    rng = np.random.default_rng(5)
    for _ in range(10):
        g = random_apv_graph(rng)
        m = metapath_adjacency(g, PAP).toarray()
        np.testing.assert_array_equal(m, m.T)
        np.testing.assert_array_equal(np.diag(m), 1)
        for v in range(m.shape[0]):
            assert metapath_neighbors(g, PAP, v) == set(np.flatnonzero(m[v]).tolist())


def test_metapath_must_close_and_fit_schema(toy_graph):
    with pytest.raises(SchemaError):
        metapath_adjacency(toy_graph, MetaPath(("paper", "author")))
    with pytest.raises(SchemaError):
        metapath_adjacency(toy_graph, MetaPath(("author", "venue", "author")))


def test_neighbor_index_error(toy_graph):
    with pytest.raises(IndexError):
        metapath_neighbors(toy_graph, PAP, 4)


def test_metapath_parse_initials():
    p = MetaPath.parse("PAP", APV)
    assert p.types == ("paper", "author", "paper")
    assert MetaPath.parse("paper-venue-paper").types == ("paper", "venue", "paper")
    with pytest.raises(SchemaError):
        MetaPath.parse("PXP", APV)


def test_instances_example(toy_graph):
    # first paper, venue path: the first two papers share the first venue
    inst = metapath_instances(toy_graph, PVP, 0, 10, seed=0)
    assert [i.nodes for i in inst] == [frozenset({("paper", 0), ("venue", 0), ("paper", 1)})]


def test_instances_isolated_anchor():
    g = HetGraph(APV, {"author": 2, "paper": 3, "venue": 1}, {"published_in": [(0, 0), (1, 0)]})
    assert metapath_instances(g, PVP, 2, 5, seed=0) == []


def test_instances_full_enumeration_matches_oracle():
    rng = np.random.default_rng(8)
    for _ in range(25):
        g = random_apv_graph(rng, max_nodes=14)
        for path in (PAP, PVP):
            for anchor_type in ("paper", path.types[1]):
                for anchor in range(g.num_nodes[anchor_type]):
                    got = metapath_instances(g, path, anchor, 10_000, seed=1, anchor_type=anchor_type)
                    assert {i.walk for i in got} == instance_oracle(g, path, anchor, anchor_type)


def test_instances_sampling_is_seeded_subset():
    rng = np.random.default_rng(2)
    g = random_apv_graph(rng, max_nodes=40, density=0.4)
    every = {i.walk for i in metapath_instances(g, PVP, 0, 10_000, seed=0)}
    a = metapath_instances(g, PVP, 0, 3, seed=7)
    b = metapath_instances(g, PVP, 0, 3, seed=7)
    assert a == b
    assert len(a) == min(3, len(every))
    assert {i.walk for i in a} <= every


def test_random_walk_sampler_returns_valid_instances():
    rng = np.random.default_rng(4)
    sizes = {"author": 12, "paper": 10, "venue": 3}
    edges = {"writes": np.argwhere(rng.random((12, 10)) < 0.3),
             "published_in": np.argwhere(rng.random((10, 3)) < 0.5)}
    g = HetGraph(APV, sizes, edges)
    every = {i.walk for i in metapath_instances(g, PAP, 1, 10_000, seed=0)}
    walked = metapath_instances(g, PAP, 1, 5, seed=3, enumeration_limit=0)
    assert walked
    assert {i.walk for i in walked} <= every
    assert len(walked) <= 5


def test_induced_subgraph_drops_crossing_edges(toy_graph):
    sub = toy_graph.induced({"author": [1], "paper": [1, 2], "venue": [0, 1]})
    assert sub.num_nodes == {"author": 1, "paper": 2, "venue": 2}
    np.testing.assert_array_equal(sub.edges["writes"], [[0, 0]])
    np.testing.assert_array_equal(sub.edges["published_in"], [[0, 0], [1, 1]])
    np.testing.assert_array_equal(sub.attrs["paper"], toy_graph.attrs["paper"][[1, 2]])


def test_graph_file_round_trip(tmp_path, toy_graph):
    paths = save_graph(toy_graph, tmp_path)
    back = load_graph(*paths)
    assert back.schema == toy_graph.schema
    assert back.num_nodes == toy_graph.num_nodes
    for k in toy_graph.edges:
        np.testing.assert_array_equal(back.edges[k], toy_graph.edges[k])
    np.testing.assert_array_equal(back.attrs["paper"], toy_graph.attrs["paper"])


def test_graph_file_comments_and_errors(tmp_path):
    (tmp_path / "s.txt").write_text("# schema\nnode a\nnode b\nedge r a b\n")
    (tmp_path / "n.csv").write_text("# nodes\na,x,1.0,2.0\nb,y\nb,z\n")
    (tmp_path / "e.csv").write_text("r,x,y\n# comment\nr,x,z\n")
    g = load_graph(tmp_path / "s.txt", tmp_path / "n.csv", tmp_path / "e.csv")
    assert g.num_nodes == {"a": 1, "b": 2}
    assert g.num_edges() == 2
    (tmp_path / "e.csv").write_text("r,x,nobody\n")
    with pytest.raises(DataError):
        load_graph(tmp_path / "s.txt", tmp_path / "n.csv", tmp_path / "e.csv")


def test_graph_is_read_only(toy_graph):
    with pytest.raises(ValueError):
        toy_graph.attrs["paper"][0, 0] = 5.0


def test_walk_count_bound_covers_enumeration():
    from eagle.hetgraph import walk_count_bound
    rng = np.random.default_rng(11)
    for _ in range(20):
        g = random_apv_graph(rng, max_nodes=25)
        for path, t in ((PAP, "paper"), (PAP, "author"), (PVP, "venue"), (APA, "author")):
            for u in range(g.num_nodes[t]):
                bound = walk_count_bound(g, path, u, t)
                assert bound >= len(enumerate_instances(g, path, u, t))
                if bound == 0:
                    assert instance_oracle(g, path, u, t) == set()
