"""Training losses: output BCE, intermediate-stage BCE, and their
weighted combination.

The output loss is the mean binary cross entropy over all labels (and over
the batch). Probing every intermediate label-node state with the tied
readout gives 2T stage predictions per sample; all of them except the
final one enter the intermediate loss, which is added to the output loss
scaled by the auxiliary weight.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

CLAMP_EPS = 1e-7


def bce_out(targets: np.ndarray, probs: Tensor) -> Tensor:
    """Mean binary cross entropy over every (sample, label) entry.
    Probabilities are clamped to [eps, 1-eps] before the logs."""
    y = np.asarray(targets, dtype=probs.values.dtype)
    if y.shape != probs.values.shape:
        raise ShapeError(f"targets {y.shape} vs predictions {probs.values.shape}")
    p = T.clip(probs, CLAMP_EPS, 1.0 - CLAMP_EPS)
    pos = T.mul(T.log(p), Tensor(y))
    neg = T.mul(T.log(T.shift(T.scale(p, -1.0), 1.0)), Tensor(1.0 - y))
    return T.scale(T.reduce_sum(T.add(pos, neg)), -1.0 / y.size)


def intermediate_loss(targets: np.ndarray, probes: list) -> Tensor:
    """Sum of per-stage BCE over every probe except the final one.

    `probes` is the forward pass's [(stage, probs)] list; with T steps it
    has 2T entries and the first 2T-1 are included here.
    """
    if not probes:
        raise ValueError("intermediate_loss needs the forward probe list")
    included = probes[:-1]
    total = None
    for _stage, probs in included:
        term = bce_out(targets, probs)
        total = term if total is None else T.add(total, term)
    if total is None:  # single-probe forward: nothing before the final stage
        return Tensor(np.zeros((), dtype=probes[0][1].values.dtype))
    return total


def combined_loss(targets: np.ndarray, final: Tensor, probes: list,
                  aux_weight: float) -> Tensor:
    """Output loss plus aux_weight times the intermediate loss. A zero
    weight returns the output loss itself, bit-exactly."""
    if aux_weight < 0:
        raise ValueError("aux_weight must be >= 0")
    out = bce_out(targets, final)
    if aux_weight == 0.0 or not probes:
        return out
    return T.add(out, T.scale(intermediate_loss(targets, probes), aux_weight))
