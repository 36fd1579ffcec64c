import math

import numpy as np
import pytest

from labelmp import tensor as T
from labelmp.losses import bce_out, combined_loss, intermediate_loss
from labelmp.tensor import ShapeError, Tensor, grad_check


def rng64(seed=0):
    return np.random.Generator(np.random.Philox(seed))


def test_bce_uniform_prediction_is_ln2():
    loss = bce_out(np.array([[1.0, 0.0]]), Tensor(np.array([[0.5, 0.5]])))
    assert loss.item() == pytest.approx(math.log(2.0), abs=1e-12)


def test_bce_perfect_prediction_near_zero():
    y = np.array([[1.0, 0.0, 1.0]])
    loss = bce_out(y, Tensor(y.copy()))
    assert 0.0 <= loss.item() < 1e-6


def test_bce_matches_loop_reference():
    g = rng64(1)
    y = (g.random((4, 6)) < 0.4).astype(np.float64)
    p = g.random((4, 6)) * 0.98 + 0.01
    want = 0.0
    for i in range(4):
        for j in range(6):
            want += -(y[i, j] * math.log(p[i, j]) + (1 - y[i, j]) * math.log(1 - p[i, j]))
    want /= 24.0
    assert bce_out(y, Tensor(p)).item() == pytest.approx(want, abs=1e-12)


def test_bce_shape_mismatch():
    with pytest.raises(ShapeError):
        bce_out(np.zeros((2, 3)), Tensor(np.full((3, 2), 0.5)))


def test_bce_gradient():
    y = (rng64(2).random((3, 5)) < 0.5).astype(np.float64)
    p = Tensor(rng64(3).random((3, 5)) * 0.9 + 0.05)
    assert grad_check(lambda t: bce_out(y, t), p) < 1e-6


def fake_probes(values_list):
    return [(f"{i // 2 + 1}.{i % 2 + 1}", Tensor(np.asarray(v)))
            for i, v in enumerate(values_list)]


def test_intermediate_single_probe_when_one_step():
    y = np.array([[1.0, 0.0]])
    p = np.array([[0.7, 0.2]])
    shared = Tensor(p)  # edgeless single step: 1.2 is the same object as 1.1
    probes = [("1.1", shared), ("1.2", shared)]
    got = intermediate_loss(y, probes)
    assert got.item() == pytest.approx(bce_out(y, shared).item(), abs=1e-12)


def test_intermediate_identical_probes_scale_output_loss():
    y = np.array([[1.0, 0.0, 1.0]])
    p = np.array([[0.6, 0.3, 0.8]])
    probes = fake_probes([p, p, p, p])
    base = bce_out(y, probes[-1][1]).item()
    assert intermediate_loss(y, probes).item() == pytest.approx(3 * base, rel=1e-12)


def test_intermediate_matches_hand_sum():
    g = rng64(4)
    y = (g.random((2, 4)) < 0.5).astype(np.float64)
    stage_probs = [g.random((2, 4)) * 0.9 + 0.05 for _ in range(4)]
    probes = fake_probes(stage_probs)
    want = sum(bce_out(y, Tensor(p)).item() for p in stage_probs[:-1])
    assert intermediate_loss(y, probes).item() == pytest.approx(want, abs=1e-12)


def test_combined_zero_weight_is_exactly_output_loss():
    g = rng64(5)
    y = (g.random((3, 4)) < 0.5).astype(np.float64)
    final = Tensor(g.random((3, 4)) * 0.9 + 0.05)
    probes = fake_probes([g.random((3, 4)) for _ in range(3)]) + [("2.2", final)]
    combined = combined_loss(y, final, probes, 0.0)
    assert combined.values.tobytes() == bce_out(y, final).values.tobytes()


def test_combined_identical_probes_formula():
    y = np.array([[1.0, 0.0]])
    final = Tensor(np.array([[0.7, 0.4]]))
    probes = [("1.1", final), ("1.2", final), ("2.1", final), ("2.2", final)]
    got = combined_loss(y, final, probes, 1.0).item()
    assert got == pytest.approx(4 * bce_out(y, final).item(), rel=1e-12)


def test_combined_composes_both_terms():
    g = rng64(6)
    y = (g.random((2, 5)) < 0.5).astype(np.float64)
    stage_probs = [g.random((2, 5)) * 0.9 + 0.05 for _ in range(4)]
    probes = fake_probes(stage_probs)
    final = probes[-1][1]
    want = bce_out(y, final).item() + 0.2 * intermediate_loss(y, probes).item()
    got = combined_loss(y, final, probes, 0.2).item()
    assert got == pytest.approx(want, abs=1e-12)


def test_combined_rejects_negative_weight():
    with pytest.raises(ValueError):
        combined_loss(np.zeros((1, 2)), Tensor(np.full((1, 2), 0.5)), [], -1.0)
