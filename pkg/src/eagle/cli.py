"""Command line front end.

Every verb takes ``--seed``, ``--config`` and ``--out-dir``; any
:class:`~eagle.pipeline.RunConfig` key can also be given as a flag
(``--embed-dim 32``, ``--metapaths PAP,PVP``).  Exit status is 0 on
success, 2 for configuration errors, 3 for bad input data and 4 when
training diverges.

Running ``gen``, ``split``, ``inject`` (on the fine-tune half), ``pretrain``
(on the pretrain half) and ``detect`` with one seed reproduces
:func:`eagle.pipeline.run_experiment` for that seed.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from . import pipeline
from .errors import ConfigError, DataError, TrainingDivergence
from .evaluation import ScoreReport, rank_and_threshold, write_sweep_tsv
from .hetgraph import load_graph, save_graph
from .injector import generate_synthetic, inject_contextual, preset, read_labels, write_labels
from .model import load_checkpoint, save_checkpoint

log = logging.getLogger("eagle")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4

GRAPH_FILES = ("schema.txt", "nodes.csv", "edges.csv")


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _parse_value(field: dataclasses.Field, text: str):
    if field.name == "metapaths":
        return [s.strip() for s in text.split(",") if s.strip()]
    if field.name in ("preset", "target_type", "lr_profile", "readout"):
        return text
    if field.name == "no_pretrain":
        return text.lower() in ("1", "true", "yes", "on")
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        raise ConfigError(f"{_flag(field.name)}: cannot parse {text!r}") from None


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="master seed (default: from config, else 0)")
    p.add_argument("--config", help="JSON or key = value file with run settings")
    p.add_argument("--out-dir", required=True, help="directory for the verb's output files")
    p.add_argument("-v", "--verbose", action="store_true")
    group = p.add_argument_group("run settings (override --config)")
    for f in dataclasses.fields(pipeline.RunConfig):
        if f.name == "seed":
            continue
        if f.name == "no_pretrain":
            group.add_argument("--no-pretrain", dest="cfg_no_pretrain", action="store_const", const="true",
                               help="train from a random initialisation instead of a checkpoint")
            continue
        group.add_argument(_flag(f.name), dest="cfg_" + f.name, metavar=f.name.upper())


def _run_config(args) -> pipeline.RunConfig:
    fields = {f.name: f for f in dataclasses.fields(pipeline.RunConfig)}
    overrides = {}
    for name, f in fields.items():
        raw = getattr(args, "cfg_" + name, None)
        if raw is not None:
            overrides[name] = _parse_value(f, raw)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.config:
        return pipeline.RunConfig.from_file(args.config, **overrides)
    return pipeline.RunConfig.from_dict(overrides)


def _read_graph(directory):
    for name in GRAPH_FILES:
        if not os.path.isfile(os.path.join(directory, name)):
            raise DataError(f"{directory}: missing {name}")
    return load_graph(*(os.path.join(directory, n) for n in GRAPH_FILES))


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(type(o).__name__)


# -- verbs -----------------------------------------------------------------

def cmd_gen(args, cfg):
    seeds = pipeline.stage_seeds(cfg.seed)
    g = generate_synthetic(preset(cfg.preset).scaled(cfg.scale), seeds["graph"])
    save_graph(g, args.out_dir)
    print(f"wrote {sum(g.num_nodes.values())} nodes and {g.num_edges()} edges to {args.out_dir}")


def cmd_split(args, cfg):
    g = _read_graph(args.graph)
    pre, fine = pipeline.split_graph(g, cfg.pretrain_fraction, pipeline.stage_seeds(cfg.seed)["split"])
    save_graph(pre, os.path.join(args.out_dir, "pretrain"))
    save_graph(fine, os.path.join(args.out_dir, "finetune"))
    print(f"pretrain: {pre.num_nodes}, finetune: {fine.num_nodes}")


def cmd_inject(args, cfg):
    g = _read_graph(args.graph)
    target, _ = cfg.resolve_paths(g)
    n = g.num_nodes[target]
    count = args.count if args.count is not None else int(round(cfg.anomaly_fraction * n))
    out, rec = inject_contextual(g, target, count, cfg.k, pipeline.stage_seeds(cfg.seed)["inject"])
    save_graph(out, args.out_dir)
    write_labels(os.path.join(args.out_dir, "labels.csv"), rec, n)
    _write_json(os.path.join(args.out_dir, "injection.json"), {
        "node_type": target, "k": rec.k, "anomalies": rec.anomalies, "sources": rec.sources,
        "candidates": [c.tolist() for c in rec.candidates],
    })
    print(f"injected {count} contextual anomalies into {n} {target} nodes")


def cmd_pretrain(args, cfg):
    g = _read_graph(args.graph)
    params, meta, res = pipeline.pretrain(cfg, g)
    save_checkpoint(os.path.join(args.out_dir, "checkpoint.npz"), params, meta)
    write_sweep_tsv(os.path.join(args.out_dir, "loss.tsv"),
                    [(i, p.total, p.gae, p.contrastive) for i, p in enumerate(res.losses)],
                    header=("epoch", "total", "gae", "contrastive"))
    print(f"pretrained {cfg.pretrain_epochs} epochs in {res.seconds:.2f}s; final loss {res.losses[-1].total:.4f}")


def cmd_detect(args, cfg):
    g = _read_graph(args.graph)
    target, _ = cfg.resolve_paths(g)
    labels = _labels(args.labels, g.num_nodes[target])
    params = meta = None
    if args.checkpoint and not cfg.no_pretrain:
        params, meta = load_checkpoint(args.checkpoint)
    elif not cfg.no_pretrain:
        raise ConfigError("detect needs --checkpoint unless --no-pretrain is given")
    report, res = pipeline.finetune_and_detect(cfg, params, g, labels, meta)
    report.write_csv(os.path.join(args.out_dir, "scores.csv"))
    report.write_metrics(os.path.join(args.out_dir, "metrics.json"))
    msg = f"scored {len(report.scores)} nodes"
    if report.auc is not None:
        msg += f"; AUC {report.auc:.4f}"
    print(msg)


def cmd_eval(args, cfg):
    report = ScoreReport.read_csv(args.scores)
    if args.labels:
        report = ScoreReport(report.scores, _labels(args.labels, len(report.scores)))
    if report.labels is None:
        raise DataError("no labels: give --labels or a scores file with a label column")
    flagged = None
    if args.top_k is not None or args.threshold is not None:
        flagged = rank_and_threshold(report, top_k=args.top_k, threshold=args.threshold)
    metrics = report.metrics()
    if flagged is not None:
        metrics["flagged"] = flagged
        hits = int(report.labels[flagged].sum()) if flagged else 0
        metrics["flagged_anomalies"] = hits
    _write_json(os.path.join(args.out_dir, "metrics.json"), metrics)
    print(f"AUC {report.auc:.6f}")


def cmd_bench(args, cfg):
    out = args.out_dir
    what = args.what
    if what == "scaling":
        scales = [float(s) for s in args.scales.split(",")]
        if len(scales) < 2:
            raise ConfigError("bench needs at least two --scales")
        rows = pipeline.benchmark(cfg, scales, epochs=args.epochs, repeats=args.repeats)
        keys = list(rows[0])
        write_sweep_tsv(os.path.join(out, "scaling.tsv"), [[r[k] for k in keys] for r in rows], header=keys)
        for r in rows:
            print("\t".join(f"{k}={r[k]:.4g}" if isinstance(r[k], float) else f"{k}={r[k]}" for k in keys))
    elif what == "readout":
        table = pipeline.readout_comparison(cfg)
        write_sweep_tsv(os.path.join(out, "readout.tsv"), table.items(), header=("readout", "auc"))
        for k, v in table.items():
            print(f"{k}\t{v:.4f}")
    elif what == "dims":
        rows = pipeline.dimension_sweep(cfg)
        write_sweep_tsv(os.path.join(out, "dims.tsv"), rows)
        for d, a in rows:
            print(f"{d}\t{a:.4f}")
    elif what == "ablation":
        rows = [("full", pipeline.run_experiment(cfg).auc),
                ("gamma0", pipeline.run_experiment(cfg.replace(gamma=0.0)).auc),
                ("no_pretrain", pipeline.run_experiment(cfg.replace(no_pretrain=True)).auc)]
        write_sweep_tsv(os.path.join(out, "ablation.tsv"), rows, header=("variant", "auc"))
        for k, v in rows:
            print(f"{k}\t{v:.4f}")
    elif what == "convergence":
        c = pipeline.convergence_comparison(cfg)
        _write_json(os.path.join(out, "convergence.json"), c)
        print(f"target loss {c['target_loss']:.4f}: scratch {c['scratch_epochs']} epochs, "
              f"pretrained {c['pretrained_epochs']} epochs")


def _labels(path, n):
    if path is None:
        return None
    y = read_labels(path)
    if len(y) != n:
        raise DataError(f"{path}: {len(y)} labels for {n} nodes")
    return y


# -- entry point -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eagle", description="Contrastive anomaly detection on heterogeneous graphs.")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("gen", help="generate a synthetic graph from a preset")
    _add_common(p)

    p = sub.add_parser("split", help="split a graph into pretrain and fine-tune halves")
    p.add_argument("--graph", required=True, help="graph directory")
    _add_common(p)

    p = sub.add_parser("inject", help="inject contextual anomalies and write labels")
    p.add_argument("--graph", required=True)
    p.add_argument("--count", type=int, help="number of anomalies (default: anomaly_fraction of the target nodes)")
    _add_common(p)

    p = sub.add_parser("pretrain", help="train from scratch and write a checkpoint")
    p.add_argument("--graph", required=True)
    _add_common(p)

    p = sub.add_parser("detect", help="fine-tune a checkpoint on a graph and score its nodes")
    p.add_argument("--graph", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--labels", help="optional ground truth (index,label lines)")
    _add_common(p)

    p = sub.add_parser("eval", help="AUC and top-k report for a scores file")
    p.add_argument("--scores", required=True)
    p.add_argument("--labels")
    p.add_argument("--top-k", type=int)
    p.add_argument("--threshold", type=float)
    _add_common(p)

    p = sub.add_parser("bench", help="timing and ablation tables")
    p.add_argument("--what", choices=("scaling", "readout", "dims", "ablation", "convergence"), default="scaling")
    p.add_argument("--scales", default="0.5,1,2,4")
    p.add_argument("--epochs", type=int, default=5, help="timed epochs per size (scaling only)")
    p.add_argument("--repeats", type=int, default=3)
    _add_common(p)
    return parser


COMMANDS = {"gen": cmd_gen, "split": cmd_split, "inject": cmd_inject, "pretrain": cmd_pretrain,
            "detect": cmd_detect, "eval": cmd_eval, "bench": cmd_bench}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _run_config(args)
        os.makedirs(args.out_dir, exist_ok=True)
        COMMANDS[args.verb](args, cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergence as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
