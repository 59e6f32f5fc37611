"""Contrastive graph-autoencoder anomaly detection on heterogeneous graphs."""
from .errors import (CompatibilityError, ConfigError, DataError, EagleError, SchemaError, SplitError,
                     TrainingDivergence)
from .evaluation import ScoreReport, auc, rank_and_threshold
from .hetgraph import EdgeType, HetGraph, MetaPath, Schema, load_graph, metapath_adjacency, save_graph
from .injector import SynthSchema, generate_synthetic, inject_contextual, preset
from .model import EagleParams, ModelConfig, load_checkpoint, save_checkpoint
from .pipeline import RunConfig, finetune_and_detect, pretrain, run_experiment, split_graph

__all__ = [
    "CompatibilityError", "ConfigError", "DataError", "EagleError", "SchemaError", "SplitError",
    "TrainingDivergence", "ScoreReport", "auc", "rank_and_threshold", "EdgeType", "HetGraph", "MetaPath",
    "Schema", "load_graph", "metapath_adjacency", "save_graph", "SynthSchema", "generate_synthetic",
    "inject_contextual", "preset", "EagleParams", "ModelConfig", "load_checkpoint", "save_checkpoint",
    "RunConfig", "finetune_and_detect", "pretrain", "run_experiment", "split_graph",
]
__version__ = "0.1.0"
