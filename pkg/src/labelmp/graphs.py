"""Label-interaction graphs (and known input graphs) as boolean adjacency.

Three modes drive the label-to-label stage: `edgeless` skips the stage
entirely, `fully_connected` lets every label attend to every label, and
`prior` restricts attention to a given structure (from training-set label
co-occurrence or an external edge list). Prior and fully-connected graphs
always include self-loops; edgeless has none.
"""

from __future__ import annotations

import numpy as np

from .data import DataError, ParseError

MODES = ("edgeless", "fully_connected", "prior")
VARIANT_MODES = {"el": "edgeless", "fc": "fully_connected", "pr": "prior"}


class LabelGraph:
    def __init__(self, mode: str, adjacency: np.ndarray):
        if mode not in MODES:
            raise ValueError(f"unknown graph mode {mode!r}")
        self.mode = mode
        self.adjacency = np.asarray(adjacency, dtype=bool)

    @property
    def size(self) -> int:
        return self.adjacency.shape[0]

    def neighbors(self, i) -> np.ndarray:
        return np.flatnonzero(self.adjacency[i])


def build_edgeless(count: int) -> LabelGraph:
    if count < 1:
        raise ValueError("graph needs at least one node")
    return LabelGraph("edgeless", np.zeros((count, count), dtype=bool))


def build_fully_connected(count: int) -> LabelGraph:
    if count < 1:
        raise ValueError("graph needs at least one node")
    return LabelGraph("fully_connected", np.ones((count, count), dtype=bool))


def build_cooccurrence(training_label_sets, count: int) -> LabelGraph:
    """Edge (i, j) iff labels i != j co-occur in at least one training
    sample; diagonal always true. Only the training split may be passed."""
    if count < 1:
        raise ValueError("graph needs at least one node")
    adj = np.eye(count, dtype=bool)
    for labels in training_label_sets:
        ids = sorted(labels)
        if ids and (ids[0] < 0 or ids[-1] >= count):
            raise DataError(f"label id out of range [0, {count})")
        for a in ids:
            for b in ids:
                adj[a, b] = True
    return LabelGraph("prior", adj)


def load_adjacency(path, count: int) -> LabelGraph:
    """Prior graph from an edge-list file: whitespace-separated integer
    pairs, one per line, `#` comments allowed. Edges are symmetrized and
    the diagonal is forced true."""
    adj = np.eye(count, dtype=bool)
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParseError(f"{path}:{lineno}: expected two node ids, got {line!r}")
            try:
                a, b = int(parts[0]), int(parts[1])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-integer node id") from None
            if not (0 <= a < count and 0 <= b < count):
                raise DataError(f"{path}:{lineno}: node id out of range [0, {count})")
            adj[a, b] = True
            adj[b, a] = True
    return LabelGraph("prior", adj)
