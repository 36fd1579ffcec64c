import math

import numpy as np
import pytest

from labelmp import tensor as T
from labelmp.tensor import (
    EmptyNeighborhoodError,
    ShapeError,
    Tape,
    Tensor,
    backward,
    grad_check,
)


def rng64(seed=0):
    return np.random.Generator(np.random.Philox(seed))


def randt(shape, seed=0, requires_grad=False):
    return Tensor(rng64(seed).standard_normal(shape), requires_grad=requires_grad)


# --- matmul ---------------------------------------------------------------

def test_matmul_identity():
    out = T.matmul(Tensor([[1.0, 0.0], [0.0, 1.0]]), Tensor([[2.0], [3.0]]))
    assert np.array_equal(out.values, [[2.0], [3.0]])


def test_matmul_direct():
    out = T.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
    assert np.array_equal(out.values, [[11.0]])


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError):
        T.matmul(randt((2, 3)), randt((2, 3)))


def test_matmul_grad_matches_finite_differences():
    a = randt((3, 3), seed=1, requires_grad=True)
    b = randt((3, 3), seed=2)
    err = grad_check(lambda x: T.reduce_sum(T.matmul(x, b)), a)
    assert err < 1e-6


def test_matmul_batched_and_transpose_b_grads():
    b_shared = randt((4, 5), seed=3)
    a = randt((2, 3, 4), seed=4, requires_grad=True)
    assert grad_check(lambda x: T.reduce_sum(T.matmul(x, b_shared)), a) < 1e-6

    c = randt((2, 3, 4), seed=5)
    d = randt((2, 6, 4), seed=6, requires_grad=True)
    assert grad_check(lambda x: T.reduce_sum(T.matmul(c, x, transpose_b=True)), d) < 1e-6


# --- elementwise family ----------------------------------------------------

def test_relu_values():
    assert np.array_equal(T.relu(Tensor([-1.0, 0.0, 2.0])).values, [0.0, 0.0, 2.0])


def test_sigmoid_at_zero():
    assert T.sigmoid(Tensor(0.0)).item() == 0.5


def test_sigmoid_grad_at_zero():
    x = Tensor(np.zeros(1), requires_grad=True)
    with Tape():
        out = T.reduce_sum(T.sigmoid(x))
    backward(out)
    assert x.grad[0] == pytest.approx(0.25)


def test_sigmoid_extreme_inputs_stay_finite():
    out = T.sigmoid(Tensor([-1e4, 1e4]))
    assert np.isfinite(out.values).all()
    assert out.values[0] == 0.0 and out.values[1] == 1.0


def test_add_shape_mismatch():
    with pytest.raises(ShapeError):
        T.add(randt((2, 3)), randt((3, 2)))


def test_add_mul_scalar_broadcast():
    x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    s = Tensor(np.array(2.0), requires_grad=True)
    with Tape():
        out = T.reduce_sum(T.mul(T.add(x, s), s))
    backward(out)
    assert np.allclose(x.grad, [2.0, 2.0, 2.0])
    # d/ds sum((x+s)*s) = sum(x) + 2*3*s
    assert s.grad == pytest.approx(6.0 + 12.0)


# --- masked softmax ---------------------------------------------------------

def test_masked_softmax_equal_logits():
    out = T.masked_softmax(Tensor([[5.0, 5.0]]), [[True, True]])
    assert np.allclose(out.values, [[0.5, 0.5]])


def test_masked_softmax_single_neighbor():
    out = T.masked_softmax(Tensor([[3.0, 9.0]]), [[True, False]])
    assert out.values[0, 0] == 1.0
    assert out.values[0, 1] == 0.0  # bit-exact


def test_masked_softmax_direct_formula():
    out = T.masked_softmax(Tensor([[0.0, math.log(3.0)]]), [[True, True]])
    assert np.allclose(out.values, [[0.25, 0.75]], atol=1e-12)


def test_masked_softmax_all_false_row_raises():
    with pytest.raises(EmptyNeighborhoodError):
        T.masked_softmax(Tensor([[1.0, 2.0]]), [[False, False]])


def test_masked_softmax_rows_sum_to_one_and_masked_exact_zero():
    g = rng64(11)
    for _ in range(50):
        rows, cols = int(g.integers(1, 6)), int(g.integers(2, 8))
        mask = g.random((rows, cols)) < 0.6
        mask[np.arange(rows), g.integers(0, cols, rows)] = True
        logits = Tensor(g.standard_normal((rows, cols)) * 10)
        out = T.masked_softmax(logits, mask).values
        assert np.all(out[~mask] == 0.0)
        assert np.allclose(out.sum(axis=-1), 1.0, atol=1e-6)
        assert np.isfinite(out).all()


def test_masked_softmax_huge_logits_stable():
    out = T.masked_softmax(Tensor([[1e4, 1e4 - 5.0]]), [[True, True]])
    assert np.isfinite(out.values).all()
    assert out.values.sum() == pytest.approx(1.0)


# --- layer norm --------------------------------------------------------------

def test_layer_norm_constant_vector():
    x = Tensor([[1.0, 1.0, 1.0, 1.0]])
    out = T.layer_norm(x, Tensor(np.ones(4)), Tensor(np.zeros(4)))
    assert np.allclose(out.values, 0.0)


def test_layer_norm_already_normalized():
    out = T.layer_norm(Tensor([[-1.0, 1.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=0.0)
    assert np.allclose(out.values, [[-1.0, 1.0]])


def test_layer_norm_grad_wrt_x():
    gain = randt((6,), seed=21)
    bias = randt((6,), seed=22)
    x = randt((4, 6), seed=23, requires_grad=True)
    w = rng64(24).standard_normal((4, 6))
    err = grad_check(lambda t: T.reduce_sum(T.mul(T.layer_norm(t, gain, bias), Tensor(w))), x)
    assert err < 1e-5


def test_layer_norm_grad_wrt_gain_bias():
    x = randt((3, 5), seed=25)
    bias = randt((5,), seed=26)
    gain = randt((5,), seed=27, requires_grad=True)
    assert grad_check(lambda g: T.reduce_sum(T.layer_norm(x, g, bias)), gain) < 1e-6
    gain2 = randt((5,), seed=27)
    bias2 = randt((5,), seed=28, requires_grad=True)
    assert grad_check(lambda b: T.reduce_sum(T.layer_norm(x, gain2, b)), bias2) < 1e-6


def test_layer_norm_empty_axis_rejected():
    with pytest.raises(ShapeError):
        T.layer_norm(Tensor(np.zeros((2, 0))), Tensor(np.zeros(0)), Tensor(np.zeros(0)))


# --- dropout ------------------------------------------------------------------

def test_dropout_p_zero_is_identity():
    x = randt((5, 5), seed=31)
    assert T.dropout(x, 0.0, True, rng64(1)) is x


def test_dropout_eval_is_identity():
    x = randt((5, 5), seed=32)
    assert T.dropout(x, 0.9, False, rng64(1)) is x


def test_dropout_rate_one_rejected():
    with pytest.raises(ValueError):
        T.dropout(randt((2,)), 1.0, True, rng64(1))


def test_dropout_preserves_expectation():
    x = Tensor(np.ones(100_000))
    out = T.dropout(x, 0.5, True, rng64(99))
    assert 0.98 <= out.values.mean() <= 1.02


def test_dropout_deterministic_given_seed():
    x = randt((64,), seed=33)
    a = T.dropout(x, 0.3, True, rng64(5)).values
    b = T.dropout(x, 0.3, True, rng64(5)).values
    assert np.array_equal(a, b)


# --- backward ------------------------------------------------------------------

def test_backward_sum_grad_is_ones():
    x = Tensor(np.array([1.0, 5.0, -2.0]), requires_grad=True)
    with Tape():
        loss = T.reduce_sum(x)
    backward(loss)
    assert np.array_equal(x.grad, [1.0, 1.0, 1.0])


def test_backward_sum_of_squares():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    with Tape():
        loss = T.reduce_sum(T.mul(x, x))
    backward(loss)
    assert np.array_equal(x.grad, [2.0, 4.0])


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape():
        out = T.mul(x, x)
    with pytest.raises(ValueError):
        backward(out)


def test_backward_accumulates_on_repeat():
    x = Tensor(np.array([2.0]), requires_grad=True)
    with Tape():
        loss = T.reduce_sum(T.mul(x, x))
    backward(loss)
    backward(loss)
    assert x.grad[0] == pytest.approx(8.0)


def test_no_tape_means_no_recording():
    x = Tensor(np.ones(3), requires_grad=True)
    out = T.mul(x, x)
    assert out.requires_grad is False and out._tape is None


# --- grad_check oracle self-tests ------------------------------------------------

def test_grad_check_sum_of_squares():
    x = Tensor(np.array([1.0, 2.0, 3.0]))
    assert grad_check(lambda t: T.reduce_sum(T.mul(t, t)), x, h=1e-5) < 1e-7


def test_grad_check_sigmoid_sum():
    x = randt((7,), seed=41)
    assert grad_check(lambda t: T.reduce_sum(T.sigmoid(t)), x) < 1e-6


def test_grad_check_masked_softmax_dot():
    w = rng64(42).standard_normal(5)
    mask = np.array([[True, True, False, True, True]])
    x = randt((1, 5), seed=43)
    f = lambda t: T.reduce_sum(T.mul(T.masked_softmax(t, mask), Tensor(w[None, :])))
    assert grad_check(f, x) < 1e-5


# --- every primitive, 10 random points --------------------------------------------

def _primitive_cases(seed):
    g = rng64(seed)
    b = Tensor(g.standard_normal((4, 3)))
    v = Tensor(g.standard_normal(3))
    w = Tensor(g.standard_normal((2, 4, 3)))
    mask = g.random((2, 4)) < 0.7
    mask[:, 0] = True
    ids = g.integers(0, 6, (2, 4))
    weights = g.standard_normal((2, 4))
    c24 = Tensor(g.standard_normal((2, 4)))
    c23 = Tensor(g.standard_normal((2, 3)))
    c46 = Tensor(g.standard_normal((4, 6)))
    cases = {
        "matmul": ((4, 4), lambda x: T.reduce_sum(T.matmul(x, b))),
        "matmul_t": ((5, 3), lambda x: T.reduce_sum(T.matmul(b, x, transpose_b=True))),
        "add": ((4, 3), lambda x: T.reduce_sum(T.mul(T.add(x, b), b))),
        "mul": ((4, 3), lambda x: T.reduce_sum(T.mul(x, b))),
        "scale": ((4, 3), lambda x: T.reduce_sum(T.scale(x, -1.7))),
        "shift": ((4, 3), lambda x: T.reduce_sum(T.mul(T.shift(x, 2.5), b))),
        "relu": ((4, 3), lambda x: T.reduce_sum(T.mul(T.relu(x), b))),
        "sigmoid": ((4, 3), lambda x: T.reduce_sum(T.mul(T.sigmoid(x), b))),
        "log": ((4, 3), lambda x: T.reduce_sum(T.log(T.shift(T.sigmoid(x), 0.1)))),
        "clip": ((4, 3), lambda x: T.reduce_sum(T.clip(x, -10.0, 10.0))),
        "add_rowvec": ((4, 3), lambda x: T.reduce_sum(T.mul(T.add_rowvec(x, v), b))),
        "masked_softmax": ((2, 4), lambda x: T.reduce_sum(T.mul(T.masked_softmax(x, mask), c24))),
        "layer_norm": ((4, 3), lambda x: T.reduce_sum(T.mul(T.layer_norm(x, v, v), b))),
        "dropout": ((4, 3), lambda x: T.reduce_sum(T.dropout(x, 0.4, True, rng64(777)))),
        "reduce_sum_axis": ((2, 4, 3), lambda x: T.reduce_sum(T.mul(T.reduce_sum(x, axis=1), c23))),
        "concat": ((4, 3), lambda x: T.reduce_sum(T.mul(T.concat([x, b]), c46))),
        "expand_leading": ((4, 3), lambda x: T.reduce_sum(T.mul(T.expand_leading(x, 2), w))),
        "embedding": ((6, 3), lambda x: T.reduce_sum(T.mul(T.embedding(x, ids, weights), w))),
    }
    return cases


@pytest.mark.parametrize("point", range(10))
def test_all_primitives_grad_check(point):
    cases = _primitive_cases(seed=1000 + point)
    g = rng64(2000 + point)
    for name, (shape, f) in cases.items():
        x = Tensor(g.standard_normal(shape))
        err = grad_check(f, x, h=1e-5)
        assert err < 1e-5, f"{name}: rel err {err}"


# --- misc contracts -----------------------------------------------------------------

def test_embedding_id_out_of_range():
    table = randt((4, 3))
    with pytest.raises(IndexError):
        T.embedding(table, np.array([0, 4]))


def test_forward_determinism():
    x1 = randt((8, 8), seed=50)
    x2 = randt((8, 8), seed=50)
    out1 = T.layer_norm(T.relu(T.matmul(x1, x1)), Tensor(np.ones(8)), Tensor(np.zeros(8)))
    out2 = T.layer_norm(T.relu(T.matmul(x2, x2)), Tensor(np.ones(8)), Tensor(np.zeros(8)))
    assert np.array_equal(out1.values, out2.values)


def test_assert_finite_raises_with_stage_name():
    with pytest.raises(FloatingPointError, match="stage-under-test"):
        T.assert_finite(np.array([1.0, np.nan]), "stage-under-test")
