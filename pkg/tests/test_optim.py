import math

import numpy as np
import pytest

from tmaflow.autodiff import Tensor, parameter
from tmaflow.optim import OneCycle, OptimizerState, clip_grad_norm, optimizer_step


def test_one_cycle_shape():
    s = OneCycle(1e-3, 1000)
    assert s(0) == pytest.approx(1e-3 / 25)
    assert s(50) == pytest.approx(1e-3)
    assert s(1000) == pytest.approx(1e-3 / 25)
    mid = 50 + 475
    assert s(mid) == pytest.approx((1e-3 / 25 + 1e-3) / 2)
    lrs = [s(t) for t in range(1001)]
    assert all(a <= b for a, b in zip(lrs[:50], lrs[1:51]))
    assert all(a >= b for a, b in zip(lrs[50:], lrs[51:]))


def test_one_cycle_tiny_runs():
    s = OneCycle(1.0, 1)
    assert math.isfinite(s(0)) and math.isfinite(s(1))


def test_clip_grad_norm():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    assert clip_grad_norm(grads, 1.0) == pytest.approx(5.0)
    assert np.hypot(grads["a"][0], grads["b"][0]) == pytest.approx(1.0, abs=1e-6)
    small = {"a": np.array([0.1])}
    clip_grad_norm(small, 1.0)
    assert small["a"][0] == 0.1


def test_first_adam_step_is_sign_sized():
    p = {"w": parameter(np.array([1.0, -2.0, 0.5]))}
    state = OptimizerState(lr=0.1, weight_decay=0.0)
    optimizer_step(p, {"w": np.array([10.0, -0.01, 0.0])}, state)
    assert np.allclose(p["w"].data, [0.9, -1.9, 0.5], atol=1e-6)
    assert state.step == 1


def test_decoupled_weight_decay():
    p = {"w": parameter(np.array([2.0]))}
    state = OptimizerState(lr=0.5, weight_decay=0.1)
    optimizer_step(p, {}, state)  # zero gradient: decay only
    assert p["w"].data[0] == pytest.approx(2.0 * (1 - 0.05))


def test_schedule_drives_lr():
    state = OptimizerState(schedule=OneCycle(1e-2, 100))
    assert state.current_lr() == pytest.approx(1e-2 / 25)
    p = {"w": parameter(np.zeros(1))}
    for _ in range(5):
        optimizer_step(p, {"w": np.ones(1)}, state)
    assert state.current_lr() == pytest.approx(1e-2)


def test_quadratic_converges():
    p = {"w": parameter(np.array([3.0, -4.0]))}
    state = OptimizerState(lr=0.05, weight_decay=0.0)
    for _ in range(400):
        optimizer_step(p, {"w": 2 * p["w"].data}, state)
    assert np.abs(p["w"].data).max() < 0.05


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        optimizer_step({"w": parameter(np.zeros(2))}, {"w": np.zeros(3)}, OptimizerState())
