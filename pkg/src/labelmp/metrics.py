"""Evaluation metrics for multi-label prediction, plus validation-grid
threshold selection.

Example-based: subset accuracy (exact label-vector match), Hamming
accuracy (per-label accuracy averaged), and example-based F1. Label-based:
macro F1 (per-label F1 averaged over labels) and micro F1 (F1 of pooled
confusion counts).

0/0 conventions: a sample with no true and no predicted labels counts as
ebF1 = 1.0 (the prediction is exactly right); a label absent from both the
targets and the predictions across the whole split is excluded from the
macro average.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

METRIC_NAMES = ("acc", "ha", "ebf1", "mif1", "maf1")

THRESHOLD_GRID = tuple(round(0.05 * i, 2) for i in range(1, 19))  # 0.05 .. 0.90


def _as_binary(a) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a))
    return (a > 0).astype(np.int64)


def _check_pair(y, yhat):
    if y.shape != yhat.shape:
        raise ValueError(f"shape mismatch: targets {y.shape} vs predictions {yhat.shape}")


def subset_accuracy(targets, predicted) -> float:
    y, p = _as_binary(targets), _as_binary(predicted)
    _check_pair(y, p)
    return float(np.all(y == p, axis=1).mean())


def hamming_accuracy(targets, predicted) -> float:
    y, p = _as_binary(targets), _as_binary(predicted)
    _check_pair(y, p)
    return float((y == p).mean())


def example_f1(targets, predicted) -> float:
    y, p = _as_binary(targets), _as_binary(predicted)
    _check_pair(y, p)
    overlap = 2.0 * (y & p).sum(axis=1)
    denom = y.sum(axis=1) + p.sum(axis=1)
    scores = np.where(denom > 0, overlap / np.maximum(denom, 1), 1.0)
    return float(scores.mean())


def _label_counts(y, p):
    tp = (y & p).sum(axis=0)
    fp = ((1 - y) & p).sum(axis=0)
    fn = (y & (1 - p)).sum(axis=0)
    return tp, fp, fn


def macro_f1(targets, predicted) -> float:
    y, p = _as_binary(targets), _as_binary(predicted)
    _check_pair(y, p)
    tp, fp, fn = _label_counts(y, p)
    active = (tp + fp + fn) > 0
    if not active.any():
        return 0.0
    f1 = 2.0 * tp[active] / (2.0 * tp[active] + fp[active] + fn[active])
    return float(f1.mean())


def micro_f1(targets, predicted) -> float:
    y, p = _as_binary(targets), _as_binary(predicted)
    _check_pair(y, p)
    tp, fp, fn = _label_counts(y, p)
    denom = 2.0 * tp.sum() + fp.sum() + fn.sum()
    return float(2.0 * tp.sum() / denom) if denom > 0 else 0.0


METRIC_FNS = {
    "acc": subset_accuracy,
    "ha": hamming_accuracy,
    "ebf1": example_f1,
    "mif1": micro_f1,
    "maf1": macro_f1,
}


def apply_threshold(probs: np.ndarray, tau: float) -> np.ndarray:
    return (np.asarray(probs) >= tau).astype(np.int64)


def select_threshold(targets, probs, metric: str, grid=THRESHOLD_GRID) -> float:
    """Grid-scan the global binarization threshold and return the argmax
    for one metric; ties break toward the smaller threshold."""
    targets = np.asarray(targets)
    if targets.size == 0:
        raise ValueError("threshold selection needs a nonempty validation set")
    fn = METRIC_FNS[metric]
    best_tau, best_score = None, -1.0
    for tau in grid:
        score = fn(targets, apply_threshold(probs, tau))
        if score > best_score:
            best_tau, best_score = tau, score
    return best_tau


@dataclass
class MetricsReport:
    values: dict = field(default_factory=dict)      # metric -> score
    thresholds: dict = field(default_factory=dict)  # metric -> tau

    def to_text(self) -> str:
        lines = [f"{name} {self.values[name]:.4f}" for name in METRIC_NAMES]
        lines += [f"{name}_threshold {self.thresholds[name]:.4f}" for name in METRIC_NAMES]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MetricsReport":
        report = cls()
        for line in text.splitlines():
            if not line.strip():
                continue
            name, value = line.split()
            if name.endswith("_threshold"):
                report.thresholds[name[: -len("_threshold")]] = float(value)
            else:
                report.values[name] = float(value)
        return report


def evaluate_probs(val_targets, val_probs, test_targets, test_probs) -> MetricsReport:
    """Select one threshold per metric on the validation pair, then score
    the test pair."""
    report = MetricsReport()
    for name in METRIC_NAMES:
        tau = select_threshold(val_targets, val_probs, name)
        report.thresholds[name] = tau
        report.values[name] = METRIC_FNS[name](test_targets,
                                               apply_threshold(test_probs, tau))
    return report
