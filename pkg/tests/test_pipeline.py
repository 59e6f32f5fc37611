import dataclasses
import json

import numpy as np
import pytest

from conftest import APV
from eagle.errors import CompatibilityError, ConfigError, SplitError
from eagle.hetgraph import HetGraph
from eagle.injector import generate_synthetic, preset
from eagle.model import load_checkpoint, save_checkpoint
from eagle.pipeline import (LR_PROFILES, RunConfig, benchmark, build_graphs, check_compatible,
                            epochs_to_reach, finetune_and_detect, init_params, pretrain, run_experiment,
                            split_graph, stage_seeds, train)

SMALL = dict(scale=0.3, embed_dim=16, hidden_dim=16, pretrain_epochs=20, finetune_epochs=10, score_rounds=2)


@pytest.fixture(scope="module")
def graph():
    return generate_synthetic(preset("dblp").scaled(0.3), seed=0)


def test_defaults_follow_reference_settings():
    c = RunConfig()
    assert (c.embed_dim, c.alpha, c.beta, c.gamma, c.pretrain_fraction, c.k) == (64, 0.8, 0.2, 0.3, 0.3, 50)
    assert c.learning_rate == 0.001
    assert RunConfig(lr_profile="aminer").learning_rate == LR_PROFILES["aminer"] == 0.006
    assert RunConfig(lr=0.05, lr_profile="aminer").learning_rate == 0.05


@pytest.mark.parametrize("bad", [dict(pretrain_fraction=1.0), dict(pretrain_fraction=0.0), dict(pretrain_epochs=-1),
                                 dict(lr_profile="imdb"), dict(readout="sum"), dict(embed_dim=0), dict(k=0)])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        RunConfig(**bad)


def test_config_files(tmp_path):
    (tmp_path / "a.json").write_text(json.dumps({"seed": 4, "readout": "max"}))
    assert RunConfig.from_file(tmp_path / "a.json").readout == "max"
    (tmp_path / "b.cfg").write_text("# comment\nseed = 7\npreset = dblp\nmetapaths = [\"PAP\"]\n")
    c = RunConfig.from_file(tmp_path / "b.cfg", seed=9)
    assert c.seed == 9 and c.metapaths == ["PAP"]
    (tmp_path / "c.cfg").write_text("bogus = 1\n")
    with pytest.raises(ConfigError):
        RunConfig.from_file(tmp_path / "c.cfg")
    (tmp_path / "d.cfg").write_text("no equals sign\n")
    with pytest.raises(ConfigError):
        RunConfig.from_file(tmp_path / "d.cfg")


def test_resolve_paths(graph):
    t, paths = RunConfig().resolve_paths(graph)
    assert t == "paper" and [p.types for p in paths] == [("paper", "author", "paper"), ("paper", "venue", "paper")]
    with pytest.raises(ConfigError):
        RunConfig(metapaths=["APA"]).resolve_paths(graph)


def test_stage_seeds_distinct_and_stable():
    a = stage_seeds(3)
    assert a == stage_seeds(3)
    assert len(set(a.values())) == len(a)
    assert a != stage_seeds(4)


def test_split_is_disjoint_and_seeded(graph):
    pre, fine = split_graph(graph, 0.3, seed=1)
    pre2, fine2 = split_graph(graph, 0.3, seed=1)
    for t in graph.schema.node_types:
        n = graph.num_nodes[t]
        assert pre.num_nodes[t] + fine.num_nodes[t] == n
        assert pre.num_nodes[t] == round(0.3 * n)
        np.testing.assert_array_equal(pre.attrs[t], pre2.attrs[t])
    for e in graph.edges:
        np.testing.assert_array_equal(fine.edges[e], fine2.edges[e])
    assert pre.num_edges() + fine.num_edges() <= graph.num_edges()
    # attribute rows carried over unchanged
    rows = {r.tobytes() for r in graph.attrs["paper"]}
    assert all(r.tobytes() in rows for r in fine.attrs["paper"])


def test_split_errors():
    g = HetGraph(APV, {"author": 2, "paper": 2, "venue": 1}, {"writes": [(0, 0)]})
    with pytest.raises(SplitError):
        split_graph(g, 0.3, seed=0)  # the lone venue cannot go both ways
    big = generate_synthetic(preset("dblp").scaled(0.3), seed=0)
    with pytest.raises(SplitError):
        split_graph(big, 0.999, seed=0)
    with pytest.raises(ConfigError):
        split_graph(big, 1.0, seed=0)


def test_zero_epoch_pretrain_is_initialisation(graph):
    cfg = RunConfig(**{**SMALL, "pretrain_epochs": 0})
    params, meta, res = pretrain(cfg, graph)
    t, paths = cfg.resolve_paths(graph)
    ref = init_params(cfg, graph, t, paths, stage_seeds(cfg.seed)["init"])
    for k in ref.arrays:
        np.testing.assert_array_equal(params.arrays[k], ref.arrays[k])
    assert len(meta["loss_trace"]) == 1


def test_training_reduces_loss(graph):
    cfg = RunConfig(**{**SMALL, "pretrain_epochs": 200})
    _, meta, res = pretrain(cfg, graph)
    tr = res.totals
    assert tr[-1] < tr[0]
    tail = tr[-max(2, len(tr) // 10):]
    assert np.mean(np.diff(tail)) <= 0


def test_pretrain_reproducible(graph):
    cfg = RunConfig(**SMALL)
    a, _, _ = pretrain(cfg, graph)
    b, _, _ = pretrain(cfg, graph)
    for k in a.arrays:
        assert a.arrays[k].tobytes() == b.arrays[k].tobytes()


def test_checkpoint_compatibility(graph, tmp_path):
    cfg = RunConfig(**SMALL)
    params, meta, _ = pretrain(cfg, graph)
    save_checkpoint(tmp_path / "c.npz", params, meta)
    back, meta2 = load_checkpoint(tmp_path / "c.npz")
    t, paths = cfg.resolve_paths(graph)
    check_compatible(meta2, back, graph, t, paths)
    other = generate_synthetic(dataclasses.replace(preset("dblp").scaled(0.3), attr_dim=7), seed=0)
    with pytest.raises(CompatibilityError):
        finetune_and_detect(cfg, back, other, None, meta2)
    with pytest.raises(CompatibilityError):
        check_compatible(meta2, back, graph, t, paths[:1])


def test_gamma_zero_is_reconstruction_only(graph):
    cfg = RunConfig(**{**SMALL, "gamma": 0.0})
    report, res = finetune_and_detect(cfg, None, graph)
    assert np.all(np.isnan(report.s_pos))
    assert all(p.contrastive == 0.0 for p in res.losses)


def test_no_pretrain_trains_full_budget(graph):
    cfg = RunConfig(**SMALL)
    _, res = finetune_and_detect(cfg, None, graph)
    assert len(res.losses) == cfg.pretrain_epochs + cfg.finetune_epochs + 1


def test_injection_lands_on_finetune_side():
    cfg = RunConfig(**SMALL)
    graphs, rec = build_graphs(cfg)
    n = graphs["finetune"].num_nodes["paper"]
    assert len(rec.anomalies) == round(0.05 * n)
    assert np.all(rec.anomalies < n)


def test_end_to_end_determinism(tmp_path):
    cfg = RunConfig(**SMALL, seed=5)
    a = run_experiment(cfg)
    b = run_experiment(cfg)
    a.report.write_csv(tmp_path / "a.csv")
    b.report.write_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert 0.0 <= a.auc <= 1.0


def test_epochs_to_reach():
    assert epochs_to_reach([5, 4, 3, 2], 3) == 2
    assert epochs_to_reach([5, 4], 1) is None


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_training_divergence_is_reported(graph):
    from eagle.errors import TrainingDivergence
    cfg = RunConfig(**SMALL)
    t, paths = cfg.resolve_paths(graph)
    params = init_params(cfg, graph, t, paths, 0)
    params.arrays["enc0.w1"] *= 1e200
    with pytest.raises(TrainingDivergence):
        train(params, graph, t, paths, 3, 0.001)


def test_benchmark_single_size():
    rows = benchmark(RunConfig(**SMALL), scales=(0.3,), epochs=1, repeats=1)
    assert len(rows) == 1
    assert rows[0]["epoch_s"] > 0 and rows[0]["edges"] > 0


def test_nan_embeddings_are_reported_as_divergence(graph):
    from eagle.errors import TrainingDivergence
    cfg = RunConfig(**SMALL)
    t, paths = cfg.resolve_paths(graph)
    params = init_params(cfg, graph, t, paths, 0)
    params.arrays["enc1.w2"][0, 0] = np.nan
    with pytest.raises(TrainingDivergence):
        train(params, graph, t, paths, 2, 0.001)
