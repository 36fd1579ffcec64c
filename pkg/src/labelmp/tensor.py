"""Dense tensors with reverse-mode automatic differentiation.

Small numpy-backed engine covering exactly the primitive set the message
passing model needs: matmul, a restricted elementwise family, masked
softmax, layer norm, dropout, reductions, concat, and embedding lookup.
Gradients are recorded on an explicit tape; a forward pass run without an
active tape does plain numpy math (the inference path).
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class EmptyNeighborhoodError(ValueError):
    """A softmax row has no unmasked entries to normalize over."""


class Tensor:
    """N-d value carrier. Leaves (parameters, inputs) are built directly;
    op results come out of the functions below and remember their tape."""

    __slots__ = ("values", "requires_grad", "grad", "_tape")

    def __init__(self, values, requires_grad=False, dtype=None):
        self.values = np.asarray(values, dtype=dtype)
        if self.values.dtype not in (np.float32, np.float64):
            self.values = self.values.astype(np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._tape = None

    @property
    def shape(self):
        return self.values.shape

    @property
    def dtype(self):
        return self.values.dtype

    def item(self):
        return float(self.values)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.values, requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of primitive applications.

    Recording order is topological order (operands exist before the op that
    consumes them), so the backward pass is a single reverse sweep.
    """

    def __init__(self):
        self.entries = []  # (output tensor, backward rule)
        self._prev = None

    def __enter__(self):
        global _ACTIVE
        self._prev = _ACTIVE
        _ACTIVE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE
        _ACTIVE = self._prev
        return False

    def __len__(self):
        return len(self.entries)


_ACTIVE: Tape | None = None


def _accum(t: Tensor, g: np.ndarray):
    if t.requires_grad:
        if t.grad is None:
            t.grad = np.zeros_like(t.values)
        t.grad += g


def _result(values, inputs, rule):
    """Wrap op output; record the backward rule if a tape is active and
    any input participates in differentiation."""
    needs = _ACTIVE is not None and any(t.requires_grad for t in inputs)
    out = Tensor(values, requires_grad=needs)
    if needs:
        out._tape = _ACTIVE
        _ACTIVE.entries.append((out, rule))
    return out


def backward(loss: Tensor):
    """Accumulate dLoss/dLeaf into the grad of every requires_grad leaf.

    Repeated calls without zeroing grads accumulate. Intermediate grads are
    freed as soon as they have been propagated.
    """
    if loss.values.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.values.shape}")
    if loss.grad is None:
        loss.grad = np.zeros_like(loss.values)
    loss.grad += np.ones_like(loss.values)
    tape = loss._tape
    if tape is None:
        return
    for out, rule in reversed(tape.entries):
        if out.grad is None:
            continue
        rule(out.grad)
        if out._tape is not None:  # op output: grad no longer needed
            out.grad = None


# ---------------------------------------------------------------------------
# primitives


def _swap(a):
    return np.swapaxes(a, -1, -2)


def matmul(a: Tensor, b: Tensor, transpose_b: bool = False) -> Tensor:
    """Matrix product a @ b (or a @ b.T on the last two axes).

    Supports 2d @ 2d, leading-batched @ leading-batched with equal batch
    dims, and leading-batched @ 2d (shared right operand).
    """
    bv = _swap(b.values) if transpose_b else b.values
    av = a.values
    if av.ndim < 2 or bv.ndim < 2:
        raise ShapeError("matmul operands must be at least 2-d")
    if av.shape[-1] != bv.shape[-2]:
        raise ShapeError(f"matmul inner dims disagree: {a.values.shape} @ {b.values.shape}"
                         f"{' (transposed)' if transpose_b else ''}")
    if bv.ndim != 2 and bv.shape[:-2] != av.shape[:-2]:
        raise ShapeError("matmul batch dims disagree")
    out_v = np.matmul(av, bv)

    def rule(g):
        _accum(a, np.matmul(g, _swap(bv)))
        if b.requires_grad:
            if bv.ndim == 2:
                a_flat = av.reshape(-1, av.shape[-1])
                g_flat = g.reshape(-1, g.shape[-1])
                gb = a_flat.T @ g_flat
            else:
                gb = np.matmul(_swap(av), g)
            _accum(b, _swap(gb) if transpose_b else gb)

    return _result(out_v, (a, b), rule)


def _scalar_like(t: Tensor) -> bool:
    return t.values.size == 1


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; equal shapes or one scalar operand."""
    if a.values.shape != b.values.shape and not (_scalar_like(a) or _scalar_like(b)):
        raise ShapeError(f"add shapes disagree: {a.values.shape} vs {b.values.shape}")
    out_v = a.values + b.values

    def rule(g):
        _accum(a, g.sum().reshape(a.values.shape) if _scalar_like(a) and g.size > 1 else g)
        _accum(b, g.sum().reshape(b.values.shape) if _scalar_like(b) and g.size > 1 else g)

    return _result(out_v, (a, b), rule)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product; equal shapes or one scalar operand."""
    if a.values.shape != b.values.shape and not (_scalar_like(a) or _scalar_like(b)):
        raise ShapeError(f"mul shapes disagree: {a.values.shape} vs {b.values.shape}")
    out_v = a.values * b.values

    def rule(g):
        ga = g * b.values
        gb = g * a.values
        _accum(a, ga.sum().reshape(a.values.shape) if _scalar_like(a) and ga.size > 1 else ga)
        _accum(b, gb.sum().reshape(b.values.shape) if _scalar_like(b) and gb.size > 1 else gb)

    return _result(out_v, (a, b), rule)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)

    def rule(g):
        _accum(x, g * c)

    return _result(x.values * c, (x,), rule)


def shift(x: Tensor, c: float) -> Tensor:
    def rule(g):
        _accum(x, g)

    return _result(x.values + float(c), (x,), rule)


def relu(x: Tensor) -> Tensor:
    out_v = np.maximum(x.values, 0.0)

    def rule(g):
        _accum(x, g * (x.values > 0))

    return _result(out_v, (x,), rule)


def sigmoid(x: Tensor) -> Tensor:
    v = x.values
    # split by sign to avoid exp overflow on large |x|
    out_v = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))),
                     np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))

    def rule(g):
        _accum(x, g * out_v * (1.0 - out_v))

    return _result(out_v, (x,), rule)


def log(x: Tensor) -> Tensor:
    out_v = np.log(x.values)

    def rule(g):
        _accum(x, g / x.values)

    return _result(out_v, (x,), rule)


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes only where the value was kept."""
    out_v = np.clip(x.values, lo, hi)

    def rule(g):
        _accum(x, g * ((x.values >= lo) & (x.values <= hi)))

    return _result(out_v, (x,), rule)


def add_rowvec(x: Tensor, v: Tensor) -> Tensor:
    """x + v with v broadcast along the last axis (bias add)."""
    if v.values.ndim != 1 or x.values.shape[-1] != v.values.shape[0]:
        raise ShapeError(f"add_rowvec: {x.values.shape} + {v.values.shape}")
    out_v = x.values + v.values

    def rule(g):
        _accum(x, g)
        _accum(v, g.reshape(-1, g.shape[-1]).sum(axis=0))

    return _result(out_v, (x, v), rule)


def masked_softmax(logits: Tensor, mask) -> Tensor:
    """Softmax over the last axis restricted to mask-true entries.

    Masked entries are exactly 0 in the output. Stabilized by subtracting
    the per-row max over unmasked entries. A row with no unmasked entry is
    a degenerate neighborhood and raises rather than emitting NaN.
    """
    m = np.broadcast_to(np.asarray(mask, dtype=bool), logits.values.shape)
    if not m.any(axis=-1).all():
        raise EmptyNeighborhoodError("masked_softmax: a row has no unmasked entries")
    x = np.where(m, logits.values, -np.inf)
    x = x - x.max(axis=-1, keepdims=True)
    e = np.exp(x)  # exp(-inf) == 0 exactly for masked slots
    out_v = e / e.sum(axis=-1, keepdims=True)

    def rule(g):
        inner = (g * out_v).sum(axis=-1, keepdims=True)
        _accum(logits, out_v * (g - inner))

    return _result(out_v, (logits,), rule)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    d = x.values.shape[-1]
    if d == 0:
        raise ShapeError("layer_norm over an empty last axis")
    if gain.values.shape != (d,) or bias.values.shape != (d,):
        raise ShapeError("layer_norm gain/bias must match the last axis")
    mu = x.values.mean(axis=-1, keepdims=True)
    var = x.values.var(axis=-1, keepdims=True)
    istd = 1.0 / np.sqrt(var + eps)
    xhat = (x.values - mu) * istd
    out_v = xhat * gain.values + bias.values

    def rule(g):
        if x.requires_grad:
            dxhat = g * gain.values
            gx = istd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                         - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
            _accum(x, gx)
        _accum(gain, (g * xhat).reshape(-1, d).sum(axis=0))
        _accum(bias, g.reshape(-1, d).sum(axis=0))

    return _result(out_v, (x, gain, bias), rule)


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: zero with probability p, scale survivors by 1/(1-p).

    Identity in eval mode or at p=0 (returns the input tensor itself).
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    keep = (rng.random(x.values.shape) >= p) / (1.0 - p)
    keep = keep.astype(x.values.dtype)

    def rule(g):
        _accum(x, g * keep)

    return _result(x.values * keep, (x,), rule)


def reduce_sum(x: Tensor, axis: int | None = None) -> Tensor:
    if axis is None:
        out_v = np.asarray(x.values.sum())

        def rule(g):
            _accum(x, np.broadcast_to(g, x.values.shape))
    else:
        out_v = x.values.sum(axis=axis)

        def rule(g):
            _accum(x, np.broadcast_to(np.expand_dims(g, axis), x.values.shape))

    return _result(out_v, (x,), rule)


def mean(x: Tensor) -> Tensor:
    return scale(reduce_sum(x), 1.0 / x.values.size)


def concat(parts: list[Tensor]) -> Tensor:
    """Concatenate along the last axis."""
    out_v = np.concatenate([p.values for p in parts], axis=-1)
    widths = [p.values.shape[-1] for p in parts]

    def rule(g):
        off = 0
        for p, w in zip(parts, widths):
            _accum(p, g[..., off:off + w])
            off += w

    return _result(out_v, tuple(parts), rule)


def expand_leading(x: Tensor, n: int) -> Tensor:
    """Repeat x along a new leading axis of size n; backward sums it out."""
    out_v = np.broadcast_to(x.values, (n,) + x.values.shape).copy()

    def rule(g):
        _accum(x, g.sum(axis=0))

    return _result(out_v, (x,), rule)


def embedding(table: Tensor, ids: np.ndarray, weights: np.ndarray | None = None) -> Tensor:
    """Gather rows of table by integer ids; optionally scale each row by a
    per-id weight (real-valued features)."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.values.shape[0]):
        raise IndexError("embedding id out of range")
    out_v = table.values[ids]
    if weights is not None:
        weights = np.asarray(weights, dtype=table.values.dtype)
        out_v = out_v * weights[..., None]

    def rule(g):
        if not table.requires_grad:
            return
        if weights is not None:
            g = g * weights[..., None]
        if table.grad is None:
            table.grad = np.zeros_like(table.values)
        np.add.at(table.grad, ids.reshape(-1), g.reshape(-1, g.shape[-1]))

    return _result(out_v, (table,), rule)


# ---------------------------------------------------------------------------
# test oracle


def grad_check(f, point: Tensor, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients
    of the scalar function f at point. Relative error per coordinate is
    |analytic - numeric| / (|analytic| + 1e-8).
    """
    if h <= 0:
        raise ValueError("h must be positive")
    point.grad = None
    point.requires_grad = True
    with Tape():
        out = f(point)
    backward(out)
    analytic = point.grad.reshape(-1).copy()
    point.grad = None

    flat = point.values.reshape(-1)
    numeric = np.zeros_like(analytic)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(point).values)
        flat[i] = orig - h
        fm = float(f(point).values)
        flat[i] = orig
        numeric[i] = (fp - fm) / (2.0 * h)
    return float(np.max(np.abs(analytic - numeric) / (np.abs(analytic) + 1e-8)))


def assert_finite(values: np.ndarray, where: str):
    """Raise naming the pipeline stage if values contain NaN/Inf."""
    if not np.isfinite(values).all():
        raise FloatingPointError(f"non-finite values at {where}")
