"""Full-batch transductive training with early stopping on dev QWK.

The graph holds every sentence; the cross-entropy loss is masked to the
training rows. Model selection uses dev-split QWK (the headline ordinal
metric), not dev loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import model as gnn
from .graph import HeteroGraph
from .ingest import DataError
from .metrics import (
    LevelCollapseMap,
    MetricReport,
    metric_report,
    qwk,
)
from .numeric import adam_init, adam_step, cross_entropy


class ConfigError(ValueError):
    """Invalid run configuration."""


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    max_epochs: int = 300
    patience: int = 30
    seed: int = 0
    eval_every: int = 1

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        if self.max_epochs < 1 or self.eval_every < 1:
            raise ConfigError("max_epochs and eval_every must be >= 1")
        if not 1 <= self.patience <= self.max_epochs:
            raise ConfigError("patience must be in [1, max_epochs]")


@dataclass(frozen=True)
class SplitSpec:
    """Doc-level assignment; sentences of one document never straddle splits."""

    doc_to_split: dict[str, str]

    def __post_init__(self):
        for doc, name in self.doc_to_split.items():
            if name not in ("train", "dev", "test"):
                raise DataError(f"doc {doc!r} assigned to unknown split {name!r}")


def load_splits(path) -> SplitSpec:
    """Parse a `doc_id<TAB>split` TSV."""
    table: dict[str, str] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if parts == ["doc_id", "split"]:
            continue
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: expected 2 columns, got {len(parts)}")
        doc_id, split_name = parts
        if doc_id in table:
            raise DataError(f"{path}:{lineno}: duplicate doc_id {doc_id!r}")
        table[doc_id] = split_name
    return SplitSpec(table)


@dataclass
class TrainResult:
    best_params: gnn.ModelParams
    last_params: gnn.ModelParams
    best_epoch: int
    best_dev_qwk: float
    log_rows: list[tuple[int, float, float | None]] = field(default_factory=list)


def _masked_levels(graph: HeteroGraph, mask: np.ndarray):
    gold = graph.gold_levels[mask]
    if gold.size == 0:
        raise ConfigError("mask selects no labeled sentences")
    return gold


def predict_levels(params: gnn.ModelParams, graph: HeteroGraph) -> np.ndarray:
    """Argmax readability level (1-based) per sentence; ties take the
    lowest level."""
    logits, _ = gnn.forward(graph, params)
    return np.argmax(logits, axis=1).astype(np.int64) + 1


def train(graph: HeteroGraph, model_config: gnn.ModelConfig,
          train_config: TrainConfig) -> TrainResult:
    """Train to convergence or patience; returns best/last params and the
    per-epoch (epoch, train_loss, dev_qwk) log."""
    train_mask = graph.masks.get("train")
    dev_mask = graph.masks.get("dev")
    if train_mask is None or not train_mask.any():
        raise ConfigError("training requires a non-empty train mask")
    if dev_mask is None or not dev_mask.any():
        raise ConfigError("training requires a non-empty dev mask")
    targets = graph.gold_levels - 1  # class indices; masked rows are labeled

    params = gnn.init_params(graph, model_config)
    state = adam_init(params.tensors, lr=train_config.lr) if train_config.lr > 0 else None

    best_params = params.copy()
    best_qwk = -np.inf
    best_epoch = 0
    rows: list[tuple[int, float, float | None]] = []
    evals_since_improve = 0
    dev_gold = graph.gold_levels[dev_mask]

    for epoch in range(1, train_config.max_epochs + 1):
        rng = (np.random.default_rng(train_config.seed + epoch)
               if model_config.neighbor_cap is not None else None)
        logits, trace = gnn.forward(graph, params, rng=rng)
        loss, dlogits = cross_entropy(logits, targets, train_mask)
        if state is not None:
            grads = gnn.backward(graph, params, trace, dlogits)
            adam_step(params.tensors, grads, state)

        dev_qwk: float | None = None
        if epoch % train_config.eval_every == 0:
            dev_pred = predict_levels(params, graph)[dev_mask]
            dev_qwk = qwk(dev_gold, dev_pred)
            if dev_qwk > best_qwk:
                best_qwk = dev_qwk
                best_epoch = epoch
                best_params = params.copy()
                evals_since_improve = 0
            else:
                evals_since_improve += 1
        rows.append((epoch, loss, dev_qwk))
        if evals_since_improve >= train_config.patience:
            break

    return TrainResult(best_params=best_params, last_params=params,
                       best_epoch=best_epoch, best_dev_qwk=float(best_qwk),
                       log_rows=rows)


def evaluate(params: gnn.ModelParams, graph: HeteroGraph, mask: np.ndarray,
             maps: dict[int, LevelCollapseMap] | None = None) -> MetricReport:
    """Sentence-level metric suite on the masked rows; read-only."""
    gold = _masked_levels(graph, mask)
    pred = predict_levels(params, graph)[mask]
    return metric_report(gold, pred, maps=maps)


def format_log_tsv(rows) -> str:
    lines = ["epoch\ttrain_loss\tdev_qwk"]
    for epoch, loss, dev in rows:
        dev_s = "" if dev is None else f"{dev:.6f}"
        lines.append(f"{epoch}\t{loss:.6f}\t{dev_s}")
    return "\n".join(lines) + "\n"


def write_log(rows, path) -> None:
    Path(path).write_text(format_log_tsv(rows), encoding="utf-8")
