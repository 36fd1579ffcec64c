"""The label message-passing model.

Input features and labels are both embedded as width-d nodes. Each of the
T update steps runs a feature-to-label attention pass (directed: labels
attend over input nodes) followed by a label-to-label pass over the label
graph. The label embedding table doubles as the readout projection: label
i's probability is sigmoid of the dot product between its node state and
its own embedding row. Every stage state can be probed with that same
readout, which yields the intermediate predictions used for the auxiliary
loss and for interpretability.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .blocks import MpnnBlockParams, glorot, mpnn_step
from .data import Batch, DataError
from .graphs import VARIANT_MODES, LabelGraph, build_edgeless, build_fully_connected
from .tensor import Tensor

CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Checkpoint content does not match its header or the expected model."""


@dataclass
class LampConfig:
    labels: int                 # number of output labels
    features: int               # feature vocabulary size (or dense input width)
    input_kind: str = "tabular"
    dim: int = 512
    heads: int = 4
    steps: int = 2
    aux_weight: float = 0.1     # weight on the intermediate-stage loss
    dropout: float = 0.2
    use_fmp: bool = False
    fmp_layers: int = 2
    graph_mode: str = "fc"      # el | fc | pr
    use_positional: bool | None = None  # default: only for sequence inputs
    max_len: int = 500
    precision: str = "float32"
    seed: int = 0

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.aux_weight < 0:
            raise ValueError("aux_weight must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.graph_mode not in VARIANT_MODES:
            raise ValueError(f"graph_mode must be one of {sorted(VARIANT_MODES)}")
        if self.precision not in ("float32", "float64"):
            raise ValueError("precision must be float32 or float64")
        if self.use_positional is None:
            self.use_positional = self.input_kind == "sequence"

    @property
    def dtype(self):
        return np.float64 if self.precision == "float64" else np.float32


def positional_encoding(max_len: int, dim: int, dtype=np.float32) -> np.ndarray:
    """Sinusoidal position table: sin at even columns, cos at odd columns,
    wavelengths geometric in 10000^(2i/dim)."""
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    idx = np.arange(0, dim, 2, dtype=np.float64)
    angles = pos / np.power(10000.0, idx / dim)
    table = np.zeros((max_len, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles[:, : dim // 2])
    return table.astype(dtype)


class LampParams:
    """All learned tensors. The label embedding table and the readout
    projection are one object, so updates through either view are shared."""

    def __init__(self, config: LampConfig, rng: np.random.Generator):
        dt = config.dtype
        std = 1.0 / np.sqrt(config.dim)
        self.feature_embed = Tensor(
            (rng.standard_normal((config.features, config.dim)) * std).astype(dt),
            requires_grad=True)
        self.label_embed = Tensor(
            (rng.standard_normal((config.labels, config.dim)) * std).astype(dt),
            requires_grad=True)
        self.positional = Tensor(positional_encoding(config.max_len, config.dim, dt))
        self.dense_proj = None
        if config.input_kind == "dense_vector" and config.features != config.dim:
            self.dense_proj = glorot(rng, config.features, config.dim, dt)
        n_fmp = config.fmp_layers if config.use_fmp else 0
        self.fmp_blocks = [MpnnBlockParams(config.dim, config.heads, rng, dt)
                           for _ in range(n_fmp)]
        # xy/yy blocks are per time step, not shared across steps; yy blocks
        # exist in every graph mode so variants share a parameter count
        self.xy_blocks = [MpnnBlockParams(config.dim, config.heads, rng, dt)
                          for _ in range(config.steps)]
        self.yy_blocks = [MpnnBlockParams(config.dim, config.heads, rng, dt)
                          for _ in range(config.steps)]

    def parameters(self):
        yield "feature_embed", self.feature_embed
        yield "label_embed", self.label_embed
        if self.dense_proj is not None:
            yield "dense_proj", self.dense_proj
        for prefix, blocks in (("fmp", self.fmp_blocks), ("xy", self.xy_blocks),
                               ("yy", self.yy_blocks)):
            for i, block in enumerate(blocks):
                for name, t in block.parameters():
                    yield f"{prefix}.{i}.{name}", t


def embed_inputs(batch: Batch, params: LampParams, config: LampConfig) -> Tensor:
    """Batch to input-node embeddings (B x S x d)."""
    if config.input_kind == "dense_vector":
        vec = Tensor(batch.vectors[:, None, :].astype(config.dtype))
        if params.dense_proj is None:
            return vec
        return T.matmul(vec, params.dense_proj)
    if batch.ids.shape[1] == 0:
        raise DataError("batch has no input features")
    if config.input_kind == "tabular":
        return T.embedding(params.feature_embed, batch.ids, batch.values)
    z = T.embedding(params.feature_embed, batch.ids)
    if config.use_positional:
        width = batch.ids.shape[1]
        if width > config.max_len:
            raise DataError(f"sequence length {width} exceeds max_len {config.max_len}")
        pos = Tensor(params.positional.values[:width])
        z = T.add(z, T.expand_leading(pos, batch.size))
    return z


def fmp_encode(z: Tensor, batch: Batch, params: LampParams, config: LampConfig,
               input_graph: LabelGraph | None = None, training: bool = False,
               rng: np.random.Generator | None = None):
    """Update input nodes by message passing among themselves before any
    feature-to-label step. Known input graphs restrict the neighborhoods;
    otherwise all (non-padding) nodes see each other. Returns the updated
    nodes and one attention trace per layer."""
    if not config.use_fmp:
        return z, []
    pad = batch.mask[:, None, :]
    if input_graph is not None:
        gathered = input_graph.adjacency[batch.ids[:, :, None], batch.ids[:, None, :]]
        mask = (gathered & pad) | np.eye(batch.ids.shape[1], dtype=bool)
    else:
        mask = pad
    traces = []
    for block in params.fmp_blocks:
        z, attn = mpnn_step(z, z, mask, block, config.dropout, training, rng)
        traces.append(attn.values)
    return z, traces


def feature_to_label_step(u: Tensor, z: Tensor, block: MpnnBlockParams,
                          pad_mask: np.ndarray, dropout_p: float = 0.0,
                          training: bool = False,
                          rng: np.random.Generator | None = None):
    """Directed pass: label nodes attend over the (non-padding) input nodes
    and update; input nodes are left untouched."""
    return mpnn_step(u, z, pad_mask[:, None, :] if pad_mask.ndim == 2 else pad_mask,
                     block, dropout_p, training, rng)


def label_to_label_step(u_prime: Tensor, graph: LabelGraph, block: MpnnBlockParams,
                        dropout_p: float = 0.0, training: bool = False,
                        rng: np.random.Generator | None = None):
    """Pass messages among label nodes over the label graph. In edgeless
    mode no messages are passed at all: the state is returned unchanged and
    the trace is empty."""
    if graph.mode == "edgeless":
        return u_prime, None
    return mpnn_step(u_prime, u_prime, graph.adjacency, block, dropout_p, training, rng)


def readout(u: Tensor, table: Tensor) -> Tensor:
    """Per-label probability: sigmoid of the row-wise dot product between
    each label's node state and its own row of the tied projection table."""
    if u.values.shape[-2:] != table.values.shape:
        raise T.ShapeError(f"readout: states {u.values.shape} vs table {table.values.shape}")
    w = T.expand_leading(table, u.values.shape[0]) if u.values.ndim == 3 else table
    return T.sigmoid(T.reduce_sum(T.mul(u, w), axis=-1))


@dataclass
class ForwardResult:
    final: Tensor                      # B x L probabilities
    probes: list                       # [(stage label, B x L Tensor)], 2T entries
    traces: dict = field(default_factory=dict)  # xx/xy/yy attention arrays

    @property
    def probs(self) -> np.ndarray:
        return self.final.values


class LampModel:
    def __init__(self, config: LampConfig, label_graph: LabelGraph | None = None,
                 input_graph: LabelGraph | None = None):
        if label_graph is None:
            if config.graph_mode == "el":
                label_graph = build_edgeless(config.labels)
            elif config.graph_mode == "fc":
                label_graph = build_fully_connected(config.labels)
            else:
                raise ValueError("graph_mode 'pr' needs an explicit label graph")
        if label_graph.size != config.labels:
            raise ValueError(f"label graph has {label_graph.size} nodes, config says "
                             f"{config.labels}")
        if VARIANT_MODES[config.graph_mode] != label_graph.mode:
            raise ValueError(f"graph mode {label_graph.mode} does not match config "
                             f"variant {config.graph_mode}")
        self.config = config
        self.graph = label_graph
        self.input_graph = input_graph
        self.rng = np.random.Generator(np.random.Philox(config.seed))
        self.params = LampParams(config, self.rng)

    def parameters(self):
        return self.params.parameters()

    def forward_batch(self, batch: Batch, training: bool = False) -> ForwardResult:
        cfg = self.config
        traces = {"xx": [], "xy": [], "yy": []}
        z = embed_inputs(batch, self.params, cfg)
        T.assert_finite(z.values, "embed")
        z, traces["xx"] = fmp_encode(z, batch, self.params, cfg, self.input_graph,
                                     training, self.rng)
        if traces["xx"]:
            T.assert_finite(z.values, "feature_message_passing")

        u = T.expand_leading(self.params.label_embed, batch.size)
        probes = []
        for t in range(1, cfg.steps + 1):
            u_prime, attn_xy = feature_to_label_step(
                u, z, self.params.xy_blocks[t - 1], batch.mask,
                cfg.dropout, training, self.rng)
            T.assert_finite(u_prime.values, f"step{t}.feature_to_label")
            traces["xy"].append(attn_xy.values)
            probe_1 = readout(u_prime, self.params.label_embed)
            T.assert_finite(probe_1.values, f"readout.{t}.1")
            probes.append((f"{t}.1", probe_1))

            u, attn_yy = label_to_label_step(
                u_prime, self.graph, self.params.yy_blocks[t - 1],
                cfg.dropout, training, self.rng)
            traces["yy"].append(None if attn_yy is None else attn_yy.values)
            if attn_yy is None:
                probes.append((f"{t}.2", probe_1))  # stage skipped: t.2 == t.1
            else:
                T.assert_finite(u.values, f"step{t}.label_to_label")
                probe_2 = readout(u, self.params.label_embed)
                T.assert_finite(probe_2.values, f"readout.{t}.2")
                probes.append((f"{t}.2", probe_2))

        return ForwardResult(final=probes[-1][1], probes=probes, traces=traces)


class MlpBaseline:
    """Independent-label baseline: mean input embedding through four
    ReLU layers of the model width, then a per-label sigmoid output."""

    N_HIDDEN = 4

    def __init__(self, config: LampConfig):
        if config.input_kind == "dense_vector":
            raise ValueError("baseline supports tabular and sequence inputs")
        self.config = config
        self.rng = np.random.Generator(np.random.Philox(config.seed))
        dt = config.dtype
        std = 1.0 / np.sqrt(config.dim)
        self.embed = Tensor(
            (self.rng.standard_normal((config.features, config.dim)) * std).astype(dt),
            requires_grad=True)
        self.hidden = [(glorot(self.rng, config.dim, config.dim, dt),
                        Tensor(np.zeros(config.dim, dtype=dt), requires_grad=True))
                       for _ in range(self.N_HIDDEN)]
        self.w_out = glorot(self.rng, config.dim, config.labels, dt)
        self.b_out = Tensor(np.zeros(config.labels, dtype=dt), requires_grad=True)

    def parameters(self):
        yield "embed", self.embed
        for i, (w, b) in enumerate(self.hidden):
            yield f"hidden.{i}.w", w
            yield f"hidden.{i}.b", b
        yield "w_out", self.w_out
        yield "b_out", self.b_out

    def forward_batch(self, batch: Batch, training: bool = False) -> ForwardResult:
        if not batch.mask.any(axis=1).all():
            raise DataError("batch row with no input features")
        z = T.embedding(self.embed, batch.ids, batch.values)
        keep = np.broadcast_to(batch.mask[:, :, None], z.values.shape)
        z = T.mul(z, Tensor(keep.astype(z.values.dtype)))
        total = T.reduce_sum(z, axis=1)
        inv = (1.0 / batch.mask.sum(axis=1, dtype=np.float64))[:, None]
        h = T.mul(total, Tensor(np.broadcast_to(inv, total.values.shape).astype(z.values.dtype)))
        for w, b in self.hidden:
            h = T.relu(T.add_rowvec(T.matmul(h, w), b))
        probs = T.sigmoid(T.add_rowvec(T.matmul(h, self.w_out), self.b_out))
        T.assert_finite(probs.values, "baseline.readout")
        return ForwardResult(final=probs, probes=[], traces={})


# ---------------------------------------------------------------------------
# checkpointing


def _model_type(model) -> str:
    return "mlp" if isinstance(model, MlpBaseline) else "lamp"


def _digest(arrays: dict) -> str:
    h = hashlib.sha256()
    for key in sorted(arrays):
        h.update(key.encode())
        h.update(np.ascontiguousarray(arrays[key]).tobytes())
    return h.hexdigest()


def save_checkpoint(path, model):
    arrays = {f"param/{name}": t.values for name, t in model.parameters()}
    if isinstance(model, LampModel):
        arrays["graph/adjacency"] = model.graph.adjacency
        if model.input_graph is not None:
            arrays["graph/input_adjacency"] = model.input_graph.adjacency
    meta = {
        "version": CHECKPOINT_VERSION,
        "model_type": _model_type(model),
        "config": asdict(model.config),
        "checksum": _digest(arrays),
    }
    buf = io.BytesIO()
    np.savez(buf, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
             **arrays)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path):
    """Rebuild the saved model; rejects version/shape/checksum mismatches."""
    with np.load(path) as npz:
        if "__meta__" not in npz:
            raise CheckpointError(f"{path}: not a model checkpoint")
        meta = json.loads(npz["__meta__"].tobytes().decode())
        arrays = {k: npz[k] for k in npz.files if k != "__meta__"}
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {meta.get('version')}")
    if meta["checksum"] != _digest(arrays):
        raise CheckpointError(f"{path}: checksum mismatch, file corrupt")

    config = LampConfig(**meta["config"])
    if meta["model_type"] == "mlp":
        model = MlpBaseline(config)
    else:
        graph = LabelGraph(VARIANT_MODES[config.graph_mode], arrays["graph/adjacency"])
        input_graph = None
        if "graph/input_adjacency" in arrays:
            input_graph = LabelGraph("prior", arrays["graph/input_adjacency"])
        model = LampModel(config, label_graph=graph, input_graph=input_graph)

    stored = {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")}
    for name, t in model.parameters():
        if name not in stored:
            raise CheckpointError(f"{path}: missing parameter {name}")
        if stored[name].shape != t.values.shape:
            raise CheckpointError(f"{path}: shape mismatch for {name}: "
                                  f"{stored[name].shape} vs {t.values.shape}")
        t.values = stored[name].astype(config.dtype)
    extra = set(stored) - {name for name, _ in model.parameters()}
    if extra:
        raise CheckpointError(f"{path}: unexpected parameters {sorted(extra)}")
    return model
