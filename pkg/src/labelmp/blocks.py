"""Attention message-passing block: multi-head attention message function
plus MLP update function, with residuals and layer normalization.

One block updates receiver node embeddings from sender node embeddings under
a boolean neighborhood mask. The same block type serves feature-to-feature,
feature-to-label, and label-to-label passing; only the mask differs.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, dtype) -> Tensor:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, (fan_in, fan_out)).astype(dtype),
                  requires_grad=True)


class MpnnBlockParams:
    """All learned weights of one message-passing block.

    Per head k: query/key/value projections of shape d x (d/K). The head
    outputs are concatenated back to width d and mixed by the output
    projection. The update MLP is two d x d layers with biases, and each
    sublayer carries its own layer-norm gain/bias.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator,
                 dtype=np.float32):
        if dim % heads != 0:
            raise ValueError(f"width {dim} not divisible by head count {heads}")
        self.dim = dim
        self.heads = heads
        dk = dim // heads
        self.w_query = [glorot(rng, dim, dk, dtype) for _ in range(heads)]
        self.w_key = [glorot(rng, dim, dk, dtype) for _ in range(heads)]
        self.w_value = [glorot(rng, dim, dk, dtype) for _ in range(heads)]
        self.w_out = glorot(rng, dim, dim, dtype)
        self.w_hidden = glorot(rng, dim, dim, dtype)
        self.w_project = glorot(rng, dim, dim, dtype)
        self.b_hidden = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)
        self.b_project = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)
        self.ln1_gain = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.ln1_bias = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)
        self.ln2_gain = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.ln2_bias = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)

    def parameters(self):
        for k in range(self.heads):
            yield f"w_query.{k}", self.w_query[k]
            yield f"w_key.{k}", self.w_key[k]
            yield f"w_value.{k}", self.w_value[k]
        yield "w_out", self.w_out
        yield "w_hidden", self.w_hidden
        yield "w_project", self.w_project
        yield "b_hidden", self.b_hidden
        yield "b_project", self.b_project
        yield "ln1_gain", self.ln1_gain
        yield "ln1_bias", self.ln1_bias
        yield "ln2_gain", self.ln2_gain
        yield "ln2_bias", self.ln2_bias


def _check_width(t: Tensor, dim: int, who: str):
    if t.values.shape[-1] != dim:
        raise ShapeError(f"{who} width {t.values.shape[-1]} != block width {dim}")


def attention_scores(receivers: Tensor, senders: Tensor,
                     params: MpnnBlockParams, head: int) -> Tensor:
    """Unnormalized importances for one head: scaled dot product of the
    projected receiver and sender embeddings, divided by sqrt(full width)."""
    _check_width(receivers, params.dim, "receivers")
    _check_width(senders, params.dim, "senders")
    q = T.matmul(receivers, params.w_query[head])
    u = T.matmul(senders, params.w_key[head])
    return T.scale(T.matmul(q, u, transpose_b=True), 1.0 / math.sqrt(params.dim))


def _attn_core(receivers: Tensor, senders: Tensor, mask,
               params: MpnnBlockParams):
    """Pre-residual attention output plus the per-head attention weights.

    Returns (projected messages of receiver shape, attn stacked head-first:
    heads x ... x receivers x senders).
    """
    head_outs = []
    attn = []
    for k in range(params.heads):
        scores = attention_scores(receivers, senders, params, k)
        alpha = T.masked_softmax(scores, mask)
        values = T.matmul(senders, params.w_value[k])
        head_outs.append(T.matmul(alpha, values))
        attn.append(alpha.values)
    projected = T.matmul(T.concat(head_outs), params.w_out)
    return projected, Tensor(np.stack(attn, axis=0))


def attend_messages(receivers: Tensor, senders: Tensor, mask,
                    params: MpnnBlockParams):
    """Full attention message: weighted sum of projected sender embeddings
    per head, heads concatenated and mixed, plus the receiver residual."""
    projected, attn = _attn_core(receivers, senders, mask, params)
    return T.add(receivers, projected), attn


def _mlp_core(x: Tensor, params: MpnnBlockParams) -> Tensor:
    h = T.relu(T.add_rowvec(T.matmul(x, params.w_hidden, transpose_b=True),
                            params.b_hidden))
    return T.add_rowvec(T.matmul(h, params.w_project, transpose_b=True),
                        params.b_project)


def mlp_update(messages: Tensor, params: MpnnBlockParams) -> Tensor:
    """Two-layer ReLU MLP applied node-wise, with a residual on the message."""
    _check_width(messages, params.dim, "messages")
    return T.add(messages, _mlp_core(messages, params))


def mpnn_step(receivers: Tensor, senders: Tensor, mask,
              params: MpnnBlockParams, dropout_p: float = 0.0,
              training: bool = False, rng: np.random.Generator | None = None):
    """One message-passing layer: attention sublayer then MLP sublayer, each
    as residual + dropout + layer norm (post-norm ordering)."""
    if rng is None:
        rng = np.random.default_rng()
    projected, attn = _attn_core(receivers, senders, mask, params)
    h = T.layer_norm(T.add(receivers, T.dropout(projected, dropout_p, training, rng)),
                     params.ln1_gain, params.ln1_bias)
    updated = T.layer_norm(T.add(h, T.dropout(_mlp_core(h, params), dropout_p, training, rng)),
                           params.ln2_gain, params.ln2_bias)
    return updated, attn
