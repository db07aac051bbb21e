"""SGD update semantics, decay schedule and freeze contract."""

import numpy as np
import pytest

from illumkit.layers import Parameter
from illumkit.optim import SgdHyper, effective_lr, sgd_update


def test_frozen_param_bit_identical():
    p = Parameter(np.array([1.0, -2.0, 3.5], dtype=np.float32), lr_mult=0.0)
    before_value = p.value.tobytes()
    before_momentum = p.momentum_buf.tobytes()
    hyper = SgdHyper(base_lr=0.1, momentum=0.9, weight_decay=0.01)
    for step in range(5):
        p.grad[...] = np.float32(step + 123.0)
        sgd_update([p], hyper, step)
    assert p.value.tobytes() == before_value
    assert p.momentum_buf.tobytes() == before_momentum


def test_vanilla_step():
    p = Parameter(np.array([1.0]))
    p.grad[...] = 2.0
    sgd_update([p], SgdHyper(base_lr=0.1, momentum=0.0, weight_decay=0.0), step=0)
    np.testing.assert_allclose(p.value, [0.8])


def test_decay_boundary():
    hyper = SgdHyper(base_lr=0.001, lr_decay_factor=0.1, lr_decay_every=50000)
    assert effective_lr(hyper, 0) == pytest.approx(0.001)
    assert effective_lr(hyper, 49999) == pytest.approx(0.001)
    assert effective_lr(hyper, 50000) == pytest.approx(0.0001)
    assert effective_lr(hyper, 100000) == pytest.approx(0.00001)


def test_momentum_weight_decay_hand_sequence():
    # v <- m*v - lr*(g + wd*w); w <- w + v, two steps by hand
    lr, m, wd = 0.1, 0.5, 0.1
    w, v = 1.0, 0.0
    p = Parameter(np.array([w]))
    hyper = SgdHyper(base_lr=lr, momentum=m, weight_decay=wd)
    for step, g in enumerate([2.0, -1.0]):
        p.grad[...] = g
        sgd_update([p], hyper, step)
        v = m * v - lr * (g + wd * w)
        w = w + v
    np.testing.assert_allclose(p.value, [w], rtol=1e-12)
    np.testing.assert_allclose(p.momentum_buf, [v], rtol=1e-12)


def test_lr_mult_scales_step():
    p_full = Parameter(np.array([1.0]), lr_mult=1.0)
    p_half = Parameter(np.array([1.0]), lr_mult=0.5)
    for p in (p_full, p_half):
        p.grad[...] = 1.0
        sgd_update([p], SgdHyper(base_lr=0.2, momentum=0.0, weight_decay=0.0), 0)
    np.testing.assert_allclose(p_full.value, [0.8])
    np.testing.assert_allclose(p_half.value, [0.9])


def test_hyper_validation():
    with pytest.raises(ValueError):
        SgdHyper(base_lr=0.0)
    with pytest.raises(ValueError):
        SgdHyper(momentum=1.0)
    with pytest.raises(ValueError):
        SgdHyper(weight_decay=-0.1)
