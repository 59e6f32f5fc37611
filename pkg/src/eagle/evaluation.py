"""ROC-AUC, ranking and report files."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import ConfigError


def auc(scores, labels) -> float:
    """Area under the ROC curve via the Mann-Whitney rank statistic.

    Equals the probability that a random anomaly outscores a random normal
    node, with ties counting one half.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-D and equally long")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = int((labels == 0).sum())
    if n_pos + n_neg != len(labels):
        raise ValueError("labels must be 0 or 1")
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both anomalous and normal nodes")
    ranks = rankdata(scores)  # average ranks for ties
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def ranking(scores) -> np.ndarray:
    """Node indices by descending score; ties broken by ascending index."""
    scores = np.asarray(scores, dtype=np.float64)
    return np.lexsort((np.arange(len(scores)), -scores))


@dataclass
class ScoreReport:
    scores: np.ndarray
    labels: np.ndarray | None = None
    timings: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != self.scores.shape:
                raise ValueError("labels and scores differ in length")
        order = ranking(self.scores)
        self.ranks = np.empty(len(order), dtype=np.int64)
        self.ranks[order] = np.arange(1, len(order) + 1)

    @property
    def order(self) -> np.ndarray:
        return np.argsort(self.ranks)

    @property
    def auc(self) -> float | None:
        if self.labels is None or len(set(self.labels.tolist())) < 2:
            return None
        return auc(self.scores, self.labels)

    def metrics(self) -> dict:
        out = {"auc": self.auc, "n_nodes": int(len(self.scores)), "timings": dict(self.timings)}
        if self.labels is not None:
            out["n_anomalies"] = int(self.labels.sum())
        out.update(self.extra)
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["node", "score", "rank", "label"])
            for i in self.order:
                label = "" if self.labels is None else int(self.labels[i])
                w.writerow([int(i), repr(float(self.scores[i])), int(self.ranks[i]), label])

    def write_metrics(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.metrics(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def read_csv(cls, path) -> "ScoreReport":
        rows = []
        with open(path, encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                rows.append((int(row["node"]), float(row["score"]), row["label"]))
        rows.sort()
        labels = None
        if rows and all(r[2] != "" for r in rows):
            labels = np.array([int(r[2]) for r in rows])
        return cls(np.array([r[1] for r in rows]), labels)


def rank_and_threshold(report: ScoreReport, top_k: int | None = None, threshold: float | None = None) -> list[int]:
    """Flag the ``top_k`` highest-scoring nodes, or every node scoring above ``threshold``.

    Returned in ranking order.
    """
    if (top_k is None) == (threshold is None):
        raise ConfigError("give exactly one of top_k or threshold")
    order = report.order
    if top_k is not None:
        if not 0 <= top_k <= len(order):
            raise ConfigError(f"top_k={top_k} outside [0, {len(order)}]")
        return [int(i) for i in order[:top_k]]
    return [int(i) for i in order if report.scores[i] > threshold]


def write_sweep_tsv(path, rows, header=("dim", "auc")) -> None:
    """Tab-separated table, e.g. embedding dimension against AUC."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(str(v) for v in row) + "\n")
