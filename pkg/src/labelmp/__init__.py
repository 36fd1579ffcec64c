"""Attention-based label message passing for multi-label classification."""

from .data import Batch, DataError, Dataset, ParseError, Sample, Schema
from .graphs import (
    LabelGraph,
    build_cooccurrence,
    build_edgeless,
    build_fully_connected,
    load_adjacency,
)
from .losses import bce_out, combined_loss, intermediate_loss
from .metrics import METRIC_NAMES, MetricsReport, evaluate_probs, select_threshold
from .model import (
    CheckpointError,
    ForwardResult,
    LampConfig,
    LampModel,
    MlpBaseline,
    load_checkpoint,
    save_checkpoint,
)
from .tensor import Tape, Tensor, backward, grad_check
from .trainer import Adam, TrainConfig, TrainReport, evaluate, predict, train

__version__ = "0.1.0"

__all__ = [
    "Adam", "Batch", "CheckpointError", "DataError", "Dataset", "ForwardResult",
    "LabelGraph", "LampConfig", "LampModel", "METRIC_NAMES", "MetricsReport",
    "MlpBaseline", "ParseError", "Sample", "Schema", "Tape", "Tensor",
    "TrainConfig", "TrainReport", "backward", "bce_out", "build_cooccurrence",
    "build_edgeless", "build_fully_connected", "combined_loss", "evaluate",
    "evaluate_probs", "grad_check", "intermediate_loss", "load_adjacency",
    "load_checkpoint", "predict", "save_checkpoint", "select_threshold", "train",
]
