"""Minibatch training with Adam, periodic validation, early stopping, and
checkpointing of the best-validation model."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, batch_iter
from .losses import combined_loss
from .metrics import METRIC_FNS, METRIC_NAMES, MetricsReport, apply_threshold, select_threshold
from .model import LampModel, save_checkpoint
from .tensor import Tape, backward

log = logging.getLogger(__name__)

AUX_WEIGHT_GRID = (0.0, 0.1, 0.2, 0.3)


class Adam:
    """Adam with bias correction. Tied tensors must appear once in the
    parameter list; their grad already carries the sum over all uses."""

    def __init__(self, params, lr=2e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = []
        seen = set()
        for name, t in params:
            if id(t) in seen:
                continue
            seen.add(id(t))
            self.params.append((name, t))
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.count = 0
        self.m = {name: np.zeros_like(t.values) for name, t in self.params}
        self.v = {name: np.zeros_like(t.values) for name, t in self.params}

    def zero_grad(self):
        for _, t in self.params:
            t.grad = None

    def clip_gradients(self, max_norm: float):
        total = 0.0
        for _, t in self.params:
            if t.grad is not None:
                total += float((t.grad.astype(np.float64) ** 2).sum())
        total = math.sqrt(total)
        if total > max_norm > 0:
            factor = max_norm / total
            for _, t in self.params:
                if t.grad is not None:
                    t.grad *= factor
        return total

    def step(self):
        self.count += 1
        bc1 = 1.0 - self.beta1 ** self.count
        bc2 = 1.0 - self.beta2 ** self.count
        for name, t in self.params:
            g = t.grad if t.grad is not None else np.zeros_like(t.values)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            t.values -= (self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)).astype(
                t.values.dtype)


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    lr: float = 2e-4
    patience: int = 10
    val_metric: str = "ebf1"
    clip_norm: float = 5.0
    seed: int = 0
    checkpoint_path: str | None = None
    log_path: str | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")
        if self.val_metric not in METRIC_NAMES:
            raise ValueError(f"val_metric must be one of {METRIC_NAMES}")


@dataclass
class EpochRecord:
    epoch: int
    split: str
    loss: float
    metrics: dict

    def line(self) -> str:
        vals = ", ".join(f"{self.metrics.get(n, float('nan')):.4f}" for n in METRIC_NAMES)
        return f"{self.epoch}, {self.split}, {self.loss:.6f}, {vals}"


@dataclass
class TrainReport:
    records: list = field(default_factory=list)
    best_epoch: int = 0
    best_score: float = -1.0
    steps: int = 0

    def losses(self, split="train"):
        return [r.loss for r in self.records if r.split == split]


def predict(model, dataset: Dataset, batch_size: int = 32) -> np.ndarray:
    """Eval-mode probabilities for a whole split (no tape, dropout off)."""
    chunks = [model.forward_batch(b, training=False).probs
              for b in batch_iter(dataset, batch_size)]
    return np.concatenate(chunks, axis=0)


def evaluate(model, split: Dataset, thresholds: dict, batch_size: int = 32) -> MetricsReport:
    """Score a split with externally chosen per-metric thresholds."""
    probs = predict(model, split, batch_size)
    targets = split.target_matrix()
    report = MetricsReport(thresholds=dict(thresholds))
    for name in METRIC_NAMES:
        report.values[name] = METRIC_FNS[name](
            targets, apply_threshold(probs, thresholds[name]))
    return report


def select_all_thresholds(targets, probs) -> dict:
    return {name: select_threshold(targets, probs, name) for name in METRIC_NAMES}


def _aux_weight(model) -> float:
    return model.config.aux_weight if isinstance(model, LampModel) else 0.0


def train(model, train_ds: Dataset, val_ds: Dataset, config: TrainConfig) -> TrainReport:
    """Run the full loop; on return the model carries the weights of its
    best validation epoch (also written to checkpoint_path when set)."""
    opt = Adam(model.parameters(), lr=config.lr)
    report = TrainReport()
    val_targets = val_ds.target_matrix()
    best_values = None
    stale = 0
    log_fh = open(config.log_path, "w") if config.log_path else None
    try:
        for epoch in range(1, config.epochs + 1):
            epoch_loss = 0.0
            seen = 0
            collected_probs = []
            collected_targets = []
            for batch in batch_iter(train_ds, config.batch_size, shuffle=True,
                                    seed=config.seed + epoch):
                opt.zero_grad()
                with Tape():
                    result = model.forward_batch(batch, training=True)
                    loss = combined_loss(batch.targets, result.final, result.probes,
                                         _aux_weight(model))
                if not np.isfinite(loss.values):
                    raise FloatingPointError(
                        f"non-finite loss at epoch {epoch} step {report.steps}")
                backward(loss)
                opt.clip_gradients(config.clip_norm)
                opt.step()
                report.steps += 1
                epoch_loss += loss.item() * batch.size
                seen += batch.size
                collected_probs.append(result.probs)
                collected_targets.append(batch.targets)

            train_probs = np.concatenate(collected_probs, axis=0)
            train_targets = np.concatenate(collected_targets, axis=0)
            tau = select_threshold(train_targets, train_probs, config.val_metric)
            train_metrics = {n: METRIC_FNS[n](train_targets, apply_threshold(train_probs, tau))
                             for n in METRIC_NAMES}
            rec = EpochRecord(epoch, "train", epoch_loss / seen, train_metrics)
            report.records.append(rec)

            val_probs = predict(model, val_ds, config.batch_size)
            thresholds = select_all_thresholds(val_targets, val_probs)
            val_metrics = {n: METRIC_FNS[n](val_targets,
                                            apply_threshold(val_probs, thresholds[n]))
                           for n in METRIC_NAMES}
            val_rec = EpochRecord(epoch, "val", float("nan"), val_metrics)
            report.records.append(val_rec)
            if log_fh:
                log_fh.write(rec.line() + "\n" + val_rec.line() + "\n")
                log_fh.flush()

            score = val_metrics[config.val_metric]
            if score > report.best_score:
                report.best_score = score
                report.best_epoch = epoch
                best_values = {name: t.values.copy() for name, t in model.parameters()}
                stale = 0
                if config.checkpoint_path:
                    save_checkpoint(config.checkpoint_path, model)
            else:
                stale += 1
                if stale > config.patience:
                    log.info("early stop at epoch %d (best %d)", epoch, report.best_epoch)
                    break
    finally:
        if log_fh:
            log_fh.close()

    if best_values is not None:
        for name, t in model.parameters():
            t.values = best_values[name]
        if config.checkpoint_path:
            save_checkpoint(config.checkpoint_path, model)
    return report


def sweep_aux_weight(model_factory, train_ds, val_ds, config: TrainConfig,
                     grid=AUX_WEIGHT_GRID):
    """Train one model per candidate intermediate-loss weight and return
    (best weight, its model, its report) by the validation metric."""
    best = None
    for w in grid:
        model = model_factory(w)
        report = train(model, train_ds, val_ds, config)
        log.info("aux weight %.1f: val %s %.4f", w, config.val_metric, report.best_score)
        if best is None or report.best_score > best[2].best_score:
            best = (w, model, report)
    return best
