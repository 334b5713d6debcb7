"""AdamW with decoupled weight decay"""

import math

import numpy as np
import pytest

from mpfm.backend.models.errors import NumericFaultError, RejectedInputError
from mpfm.backend.nn.optim import AdamW
from mpfm.backend.nn.tensor import Tensor


def test_zero_gradients_without_decay_leave_parameters():
    p = Tensor([1.0, -2.0, 3.0], requires_grad=True)
    opt = AdamW([p], lr=0.1, weight_decay=0.0)
    for _ in range(3):
        opt.step([np.zeros(3)])
    assert np.array_equal(p.data, [1.0, -2.0, 3.0])


def test_zero_gradients_with_decay_scale_parameters():
    p = Tensor([1.0, -2.0, 3.0], requires_grad=True)
    lr, wd = 0.1, 0.01
    opt = AdamW([p], lr=lr, weight_decay=wd)
    opt.step([np.zeros(3)])
    assert np.array_equal(p.data, np.array([1.0, -2.0, 3.0]) * (1.0 - lr * wd))


def test_matches_reference_recurrence():
    lr, b1, b2, eps, wd, g = 0.05, 0.9, 0.999, 1e-8, 0.01, 0.3
    p = Tensor(1.0, requires_grad=True)
    opt = AdamW([p], lr=lr, betas=(b1, b2), eps=eps, weight_decay=wd)

    theta, m, v = 1.0, 0.0, 0.0
    for step in range(1, 21):
        opt.step([np.array(g)])
        theta *= 1 - lr * wd
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1**step)) / (math.sqrt(v / (1 - b2**step)) + eps)
        assert p.item() == pytest.approx(theta, rel=1e-12, abs=1e-14)
    assert opt.step_count == 20


def test_non_finite_gradient_leaves_state_unchanged():
    p = Tensor([1.0, 2.0], requires_grad=True)
    q = Tensor([3.0], requires_grad=True)
    opt = AdamW([p, q], lr=0.1)
    opt.step([np.array([0.1, 0.2]), np.array([0.3])])
    before = (p.data.copy(), q.data.copy(), *[a.copy() for a in opt.moments(p)])

    with pytest.raises(NumericFaultError):
        opt.step([np.array([0.1, 0.2]), np.array([np.inf])])
    assert np.array_equal(p.data, before[0])
    assert np.array_equal(q.data, before[1])
    assert np.array_equal(opt.moments(p)[0], before[2])
    assert np.array_equal(opt.moments(p)[1], before[3])
    assert opt.step_count == 1


def test_group_weight_decay_override():
    a = Tensor([1.0], requires_grad=True)
    b = Tensor([1.0], requires_grad=True)
    opt = AdamW(
        [{"params": [a]}, {"params": [b], "weight_decay": 0.0}], lr=0.1, weight_decay=0.5
    )
    opt.step([np.zeros(1), np.zeros(1)])
    assert a.item() == pytest.approx(0.95)
    assert b.item() == 1.0


def test_gradient_shape_and_count_checks():
    p = Tensor([1.0, 2.0], requires_grad=True)
    opt = AdamW([p])
    with pytest.raises(RejectedInputError):
        opt.step([])
    with pytest.raises(RejectedInputError):
        opt.step([np.zeros(3)])
