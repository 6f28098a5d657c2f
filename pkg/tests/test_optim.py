import math

import numpy as np
import pytest

from lfpfe import autodiff as ad
from lfpfe.autodiff import Adam, OneCycleSchedule, Parameter, adam_step, clip_params, onecycle_lr


def test_zero_gradient_leaves_parameter():
    p = Parameter(np.array([1.5, -2.0]))
    opt = Adam([p])
    p.grad = np.zeros(2, np.float32)
    opt.step(1e-2)
    assert np.array_equal(p.data, np.array([1.5, -2.0], np.float32))


def test_missing_gradient_is_skipped():
    p = Parameter(np.ones(2))
    opt = Adam([p])
    opt.step(0.1)
    assert np.array_equal(p.data, np.ones(2, np.float32)) and opt.states[0].step == 0


def test_clip_params():
    p = Parameter(np.array([-0.2, 0.5, 1.3]))
    clip_params([p], 0.0, 1.0)
    assert p.data.tolist() == [0.0, 0.5, 1.0]


def test_first_adam_step_has_lr_magnitude():
    p = Parameter(np.array([0.0, 0.0]))
    p.grad = np.array([3.0, -0.001], np.float32)
    adam_step([p], Adam([p]).states, 0.01)
    assert np.allclose(p.data, [-0.01, 0.01], rtol=1e-4)


def test_quadratic_bowl_converges():
    w = Parameter(np.zeros(3))
    opt = Adam([w])
    for _ in range(2000):
        opt.zero_grad()
        d = ad.sub(w, 3.0)
        ad.sum(ad.mul(d, d)).backward()
        opt.step(1e-2)
    assert np.abs(w.data - 3).max() < 1e-2


def test_onecycle_shape():
    total, lr = 1000, 1e-3
    s = OneCycleSchedule(lr, total)
    assert s(0) == pytest.approx(lr / 25)
    assert s(300) == pytest.approx(lr)
    assert s(150) == pytest.approx(lr / 25 + (lr - lr / 25) * 0.5)
    assert s(total) == pytest.approx(lr / 1e4)
    vals = [s(i) for i in range(total + 1)]
    assert all(v > 0 for v in vals)
    assert all(a <= b for a, b in zip(vals[:300], vals[1:301]))
    assert all(a >= b for a, b in zip(vals[300:], vals[301:]))
    mid = 300 + 350
    assert s(mid) == pytest.approx(lr / 1e4 + (lr - lr / 1e4) * 0.5 * (1 + math.cos(math.pi / 2)))


def test_onecycle_function_and_tiny_runs():
    assert onecycle_lr(0, 1, 1e-3) > 0
    assert onecycle_lr(5, 3, 1e-3) == pytest.approx(1e-3 / 1e4)
