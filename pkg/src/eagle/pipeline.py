"""Pretrain / fine-tune / detect workflow on top of the model."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from .errors import CompatibilityError, ConfigError, NonFiniteError, SplitError, TrainingDivergence
from .evaluation import ScoreReport, auc
from .hetgraph import DEFAULT_ENUMERATION_LIMIT, HetGraph, MetaPath
from .injector import PRESET_TARGETS, InjectionRecord, generate_synthetic, inject_contextual, preset
from .model import (EagleParams, GraphTensors, ModelConfig, anomaly_scores, forward, loss_and_grad,
                    node_discrimination)
from .nn import Adam
from .sampler import PairSampler

log = logging.getLogger(__name__)

# learning rates used for the three benchmark datasets
LR_PROFILES = {"dblp": 0.001, "aminer": 0.006, "yelp": 0.001}

# offset separating scoring rounds from training rounds in the sampler's seed space
SCORE_ROUND_OFFSET = 1_000_000


@dataclass
class RunConfig:
    preset: str = "dblp"
    scale: float = 1.0
    target_type: str | None = None
    metapaths: list[str] | None = None
    embed_dim: int = 64
    hidden_dim: int = 64
    lr: float | None = None
    lr_profile: str | None = None
    alpha: float = 0.8
    beta: float = 0.2
    gamma: float = 0.3
    readout: str = "avg"
    pretrain_epochs: int = 300
    finetune_epochs: int = 100
    pairs_per_node: int = 1
    score_rounds: int = 8
    pretrain_fraction: float = 0.3
    anomaly_fraction: float = 0.05
    k: int = 50
    seed: int = 0
    no_pretrain: bool = False
    enumeration_limit: int = DEFAULT_ENUMERATION_LIMIT

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not 0.0 < self.pretrain_fraction < 1.0:
            raise ConfigError("pretrain_fraction must lie strictly between 0 and 1")
        if not 0.0 <= self.anomaly_fraction < 1.0:
            raise ConfigError("anomaly_fraction must lie in [0, 1)")
        if self.pretrain_epochs < 0 or self.finetune_epochs < 0:
            raise ConfigError("epoch counts must be non-negative")
        if self.pairs_per_node < 1 or self.score_rounds < 1 or self.k < 1:
            raise ConfigError("pairs_per_node, score_rounds and k must be >= 1")
        if self.scale <= 0:
            raise ConfigError("scale must be positive")
        if self.lr_profile is not None and self.lr_profile not in LR_PROFILES:
            raise ConfigError(f"unknown lr_profile {self.lr_profile!r}; choose from {sorted(LR_PROFILES)}")
        if self.lr is not None and self.lr <= 0:
            raise ConfigError("lr must be positive")
        # delegates the remaining checks (dims, weights, readout)
        ModelConfig(1, 1, self.embed_dim, self.hidden_dim, self.alpha, self.beta, self.gamma, self.readout)

    @property
    def learning_rate(self) -> float:
        if self.lr is not None:
            return self.lr
        return LR_PROFILES[self.lr_profile or "dblp"]

    def replace(self, **changes) -> "RunConfig":
        d = asdict(self)
        d.update(changes)
        return RunConfig(**d)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path, **overrides) -> "RunConfig":
        """Load JSON, or ``key = value`` lines whose values are parsed as JSON when possible."""
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e.strerror}") from None
        try:
            d = json.loads(text)
        except json.JSONDecodeError:
            d = {}
            for lineno, line in enumerate(text.splitlines(), 1):
                s = line.strip()
                if not s or s.startswith("#"):
                    continue
                if "=" not in s:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value'") from None
                key, value = (p.strip() for p in s.split("=", 1))
                try:
                    d[key] = json.loads(value)
                except json.JSONDecodeError:
                    d[key] = value
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: config must be an object")
        d.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(d)

    def resolve_paths(self, graph: HetGraph) -> tuple[str, list[MetaPath]]:
        target, default_paths = PRESET_TARGETS.get(self.preset, (None, None))
        target = self.target_type or target
        specs = self.metapaths or default_paths
        if target is None or not specs:
            raise ConfigError("target_type and metapaths must be given for non-preset graphs")
        paths = [MetaPath.parse(s, graph.schema) for s in specs]
        for p in paths:
            if p.types[0] != target or p.types[-1] != target:
                raise ConfigError(f"meta-path {p.name!r} must start and end at {target!r}")
        return target, paths

    def model_config(self, in_dim: int, n_paths: int) -> ModelConfig:
        return ModelConfig(in_dim, n_paths, self.embed_dim, self.hidden_dim,
                           self.alpha, self.beta, self.gamma, self.readout)


def derive_seeds(seed: int, n: int) -> list[int]:
    """Independent integer seeds for the stages of one run."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


STAGES = ("graph", "split", "inject", "init", "pretrain", "finetune")


def stage_seeds(seed: int) -> dict[str, int]:
    return dict(zip(STAGES, derive_seeds(seed, len(STAGES))))


def split_graph(graph: HetGraph, fraction: float, seed=None) -> tuple[HetGraph, HetGraph]:
    """Random node-induced split of every type into ``fraction`` / ``1 - fraction``.

    Edges whose endpoints land on different sides are dropped.
    """
    if not 0.0 < fraction < 1.0:
        raise ConfigError("split fraction must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    first, second = {}, {}
    for t in graph.schema.node_types:
        n = graph.num_nodes[t]
        perm = rng.permutation(n)
        cut = int(round(fraction * n))
        if cut < 1 or cut > n - 1:
            raise SplitError(f"splitting {n} nodes of type {t!r} at {fraction} leaves one side empty")
        first[t], second[t] = perm[:cut], perm[cut:]
    return graph.induced(first), graph.induced(second)


@dataclass
class TrainResult:
    params: EagleParams
    losses: list = field(default_factory=list)
    seconds: float = 0.0
    sampling_seconds: float = 0.0

    @property
    def totals(self) -> np.ndarray:
        return np.array([p.total for p in self.losses])


def train(params: EagleParams, graph: HetGraph, target_type: str, paths: Sequence[MetaPath], epochs: int,
          lr: float, pairs_per_node: int = 1, seed: int = 0, eval_loss_at_end: bool = True,
          enumeration_limit: int = DEFAULT_ENUMERATION_LIMIT) -> TrainResult:
    """Full-batch Adam training in place on ``params``.

    ``losses[e]`` is the loss before update ``e``; with ``eval_loss_at_end``
    one more entry holds the loss after the last update.
    """
    data = GraphTensors.from_graph(graph, target_type, paths)
    use_pairs = params.config.gamma > 0
    sampler = PairSampler(graph, paths, target_type, pairs_per_node, seed, enumeration_limit) if use_pairs else None
    opt = Adam(params.arrays, lr=lr)
    res = TrainResult(params)
    t0 = time.perf_counter()
    for e in range(epochs + (1 if eval_loss_at_end else 0)):
        ts = time.perf_counter()
        batch = sampler.round(e) if sampler else None
        res.sampling_seconds += time.perf_counter() - ts
        try:
            parts, grads = loss_and_grad(params, data, batch)
        except NonFiniteError as err:
            raise TrainingDivergence(f"non-finite embeddings at epoch {e}") from err
        if not np.isfinite(parts.total):
            raise TrainingDivergence(
                f"loss became {parts.total} at epoch {e} (gae={parts.gae}, con={parts.contrastive})")
        res.losses.append(parts)
        if e < epochs:
            opt.step(grads)
        if e % 50 == 0:
            log.debug("epoch %d loss %.4f (gae %.4f, con %.4f)", e, parts.total, parts.gae, parts.contrastive)
    res.seconds = time.perf_counter() - t0
    if sampler and (sampler.missing_positive or sampler.missing_negative):
        log.info("%d nodes without positives, %d without negatives",
                 len(sampler.missing_positive), len(sampler.missing_negative))
    return res


def checkpoint_meta(graph: HetGraph, target_type: str, paths: Sequence[MetaPath]) -> dict:
    return {
        "schema": graph.schema.digest(),
        "target_type": target_type,
        "metapaths": [p.name for p in paths],
        "metapath_types": [list(p.types) for p in paths],
        "attr_dim": graph.attr_dim(target_type),
    }


def check_compatible(meta: dict, params: EagleParams, graph: HetGraph, target_type: str,
                     paths: Sequence[MetaPath]) -> None:
    want = checkpoint_meta(graph, target_type, paths)
    for key in ("schema", "target_type", "metapath_types", "attr_dim"):
        if key in meta and meta[key] != want[key]:
            raise CompatibilityError(f"checkpoint {key} {meta[key]!r} does not match graph ({want[key]!r})")
    if params.config.in_dim != want["attr_dim"]:
        raise CompatibilityError(f"checkpoint expects {params.config.in_dim} attributes, graph has {want['attr_dim']}")
    if params.config.n_paths != len(paths):
        raise CompatibilityError(f"checkpoint has {params.config.n_paths} meta-paths, run uses {len(paths)}")


def init_params(config: RunConfig, graph: HetGraph, target_type: str, paths, seed) -> EagleParams:
    return EagleParams.init(config.model_config(graph.attr_dim(target_type), len(paths)), seed)


def pretrain(config: RunConfig, graph: HetGraph, seed: int | None = None) -> tuple[EagleParams, dict, TrainResult]:
    """Train from a fresh initialisation; returns params, checkpoint metadata and the loss trace."""
    seeds = stage_seeds(config.seed if seed is None else seed)
    target, paths = config.resolve_paths(graph)
    params = init_params(config, graph, target, paths, seeds["init"])
    res = train(params, graph, target, paths, config.pretrain_epochs, config.learning_rate,
                config.pairs_per_node, seeds["pretrain"], enumeration_limit=config.enumeration_limit)
    meta = checkpoint_meta(graph, target, paths)
    meta["pretrain_seconds"] = res.seconds
    meta["loss_trace"] = [p.total for p in res.losses]
    return params, meta, res


def score_graph(params: EagleParams, graph: HetGraph, target_type: str, paths: Sequence[MetaPath],
                rounds: int = 8, pairs_per_node: int = 1, seed: int = 0,
                enumeration_limit: int = DEFAULT_ENUMERATION_LIMIT):
    """Anomaly scores plus the per-node mean positive/negative discrimination scores."""
    data = GraphTensors.from_graph(graph, target_type, paths)
    fwd = forward(params, data)
    n = data.n
    if params.config.gamma > 0:
        sampler = PairSampler(graph, paths, target_type, pairs_per_node, seed, enumeration_limit)
        batches = [sampler.round(SCORE_ROUND_OFFSET + r) for r in range(rounds)]
        s_pos, s_neg = node_discrimination(params, fwd.h, batches, n)
    else:
        s_pos = s_neg = np.full(n, np.nan)
    return anomaly_scores(params, data, fwd, s_pos, s_neg), s_pos, s_neg


def finetune_and_detect(config: RunConfig, params: EagleParams | None, graph: HetGraph,
                        labels=None, meta: dict | None = None,
                        seed: int | None = None) -> tuple[ScoreReport, TrainResult]:
    """Continue training ``params`` (or a fresh init when None) on ``graph`` and score its nodes."""
    seeds = stage_seeds(config.seed if seed is None else seed)
    target, paths = config.resolve_paths(graph)
    if params is None:
        params = init_params(config, graph, target, paths, seeds["init"])
        epochs = config.pretrain_epochs + config.finetune_epochs
    else:
        check_compatible(meta or {}, params, graph, target, paths)
        # the score weights follow the run config, not the checkpoint
        params = params.with_weights(alpha=config.alpha, beta=config.beta, gamma=config.gamma,
                                     readout=config.readout)
        epochs = config.finetune_epochs
    res = train(params, graph, target, paths, epochs, config.learning_rate, config.pairs_per_node,
                seeds["finetune"], enumeration_limit=config.enumeration_limit)
    t0 = time.perf_counter()
    scores, s_pos, s_neg = score_graph(params, graph, target, paths, config.score_rounds,
                                       config.pairs_per_node, seeds["finetune"], config.enumeration_limit)
    t_score = time.perf_counter() - t0
    report = ScoreReport(scores, labels, timings={"finetune": res.seconds, "score": t_score})
    report.extra["final_loss"] = float(res.losses[-1].total) if res.losses else None
    report.s_pos, report.s_neg = s_pos, s_neg
    return report, res


@dataclass
class Experiment:
    """Everything produced by :func:`run_experiment`."""

    config: RunConfig
    report: ScoreReport
    record: InjectionRecord
    pretrain: TrainResult | None
    finetune: TrainResult
    graphs: dict = field(default_factory=dict)

    @property
    def auc(self) -> float:
        return self.report.auc


def build_graphs(config: RunConfig):
    """Synthetic graph, its pretrain/fine-tune split, and the injected fine-tune graph."""
    seeds = stage_seeds(config.seed)
    g = generate_synthetic(preset(config.preset).scaled(config.scale), seeds["graph"])
    target, _ = config.resolve_paths(g)
    pre, fine = split_graph(g, config.pretrain_fraction, seeds["split"])
    m = int(round(config.anomaly_fraction * fine.num_nodes[target]))
    injected, record = inject_contextual(fine, target, m, config.k, seeds["inject"])
    return {"full": g, "pretrain": pre, "finetune": fine, "target": injected}, record


def run_experiment(config: RunConfig) -> Experiment:
    """Generate, split, inject into the fine-tune side, (pre)train and score."""
    t0 = time.perf_counter()
    graphs, record = build_graphs(config)
    target_type, _ = config.resolve_paths(graphs["full"])
    labels = record.labels(graphs["target"].num_nodes[target_type])
    pre_res = None
    meta = None
    params = None
    if not config.no_pretrain:
        params, meta, pre_res = pretrain(config, graphs["pretrain"])
    report, fine_res = finetune_and_detect(config, params, graphs["target"], labels, meta)
    if pre_res is not None:
        report.timings["pretrain"] = pre_res.seconds
    report.timings["total"] = time.perf_counter() - t0
    return Experiment(config, report, record, pre_res, fine_res, graphs)


def epochs_to_reach(losses, target: float) -> int | None:
    """Number of updates after which the loss first drops to ``target`` or below."""
    hits = np.flatnonzero(np.asarray(losses) <= target)
    return int(hits[0]) if len(hits) else None


def convergence_comparison(config: RunConfig) -> dict:
    """Updates needed on the fine-tune graph to reach the from-scratch final loss, with and without pretraining.

    Both arms see the same injected graph and sampling seed; the scratch arm
    trains for ``finetune_epochs`` updates and its final loss is the target.
    """
    graphs, _ = build_graphs(config)
    target_type, paths = config.resolve_paths(graphs["full"])
    seeds = stage_seeds(config.seed)
    budget = config.finetune_epochs
    scratch = init_params(config, graphs["target"], target_type, paths, seeds["init"])
    scratch_res = train(scratch, graphs["target"], target_type, paths, budget, config.learning_rate,
                        config.pairs_per_node, seeds["finetune"], enumeration_limit=config.enumeration_limit)
    goal = scratch_res.losses[-1].total
    params, _, _ = pretrain(config, graphs["pretrain"])
    warm_res = train(params, graphs["target"], target_type, paths, budget, config.learning_rate,
                     config.pairs_per_node, seeds["finetune"], enumeration_limit=config.enumeration_limit)
    return {
        "target_loss": goal,
        "scratch_epochs": epochs_to_reach(scratch_res.totals, goal),
        "pretrained_epochs": epochs_to_reach(warm_res.totals, goal),
        "scratch_trace": scratch_res.totals,
        "pretrained_trace": warm_res.totals,
    }


def readout_comparison(config: RunConfig, modes: Sequence[str] = ("max", "min", "avg")) -> dict[str, float]:
    return {m: run_experiment(config.replace(readout=m)).auc for m in modes}


def dimension_sweep(config: RunConfig, dims: Sequence[int] = (8, 16, 32, 64, 128, 256)) -> list[tuple[int, float]]:
    return [(d, run_experiment(config.replace(embed_dim=d, hidden_dim=d)).auc) for d in dims]


def benchmark(config: RunConfig, scales: Sequence[float] = (0.5, 1.0, 2.0, 4.0), epochs: int = 5,
              repeats: int = 3) -> list[dict]:
    """Per-size wall-clock of one sampling round, one training epoch and one scoring pass.

    Sampling is timed ``repeats`` times and each of the ``repeats * epochs``
    epochs individually; the table keeps the minimum, which is the least
    noisy estimate on a shared machine.
    """
    rows = []
    for s in scales:
        cfg = config.replace(scale=s)
        seeds = stage_seeds(cfg.seed)
        g = generate_synthetic(preset(cfg.preset).scaled(s), seeds["graph"])
        target, paths = cfg.resolve_paths(g)
        data = GraphTensors.from_graph(g, target, paths)
        sampler = PairSampler(g, paths, target, cfg.pairs_per_node, seeds["pretrain"], cfg.enumeration_limit)
        sampler.round(repeats)  # warm the instance cache with a round the timed loop never uses
        params = init_params(cfg, g, target, paths, seeds["init"])
        opt = Adam(params.arrays, lr=cfg.learning_rate)
        t_sample, t_epoch = [], []
        for r in range(repeats):
            ts = time.perf_counter()
            batch = sampler.round(r)
            t_sample.append(time.perf_counter() - ts)
            for _ in range(epochs):
                te = time.perf_counter()
                _, grads = loss_and_grad(params, data, batch)
                opt.step(grads)
                t_epoch.append(time.perf_counter() - te)
        tsc = time.perf_counter()
        score_graph(params, g, target, paths, 1, cfg.pairs_per_node, seeds["finetune"], cfg.enumeration_limit)
        t_score = time.perf_counter() - tsc
        rows.append({
            "scale": s,
            "nodes": int(data.n),
            "edges": int(g.num_edges()),
            "adj_nnz": int(sum(a.nnz for a in data.adjs)),
            "pairs": int(len(batch)),
            "sample_s": min(t_sample),
            "epoch_s": min(t_epoch),
            "score_s": t_score,
        })
    return rows


def auc_of(report: ScoreReport) -> float:
    return auc(report.scores, report.labels)
