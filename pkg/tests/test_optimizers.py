import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from odebcd.errors import NonFiniteGradientError
from odebcd.optimizers import SGD, Adam, AdamState, SgdState, adam_step, make_optimizer, sgd_step


def test_sgd_step():
    x = np.array([1.0, 2.0])
    assert np.array_equal(sgd_step(SgdState(0.5), x, np.array([2.0, -2.0])), [0.0, 3.0])


def test_adam_first_step_is_signed_lr():
    x = np.zeros(3)
    g = np.array([3.0, -0.2, 0.0])
    x1, st1 = adam_step(AdamState(0.1), x, g)
    assert np.allclose(x1, [-0.1, 0.1, 0.0], atol=1e-8)
    assert st1.t == 1


def test_adam_matches_reference_recursion(rng):
    lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
    x = rng.normal(size=4)
    ref = x.copy()
    m = v = np.zeros(4)
    opt = Adam(lr)
    for t in range(1, 30):
        g = rng.normal(size=4)
        x = opt.step(x, g)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        ref = ref - lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    assert np.allclose(x, ref, rtol=0, atol=1e-14)


def test_adam_state_is_pure(rng):
    s0 = AdamState(0.01)
    x = rng.normal(size=2)
    g = rng.normal(size=2)
    a, sa = adam_step(s0, x, g)
    b, sb = adam_step(s0, x, g)
    assert np.array_equal(a, b) and s0.t == 0 and s0.m is None


def test_adam_minimizes_quadratic():
    opt = Adam(0.05)
    x = np.array([3.0, -2.0])
    for _ in range(2000):
        x = opt.step(x, 2 * x)
    assert np.max(np.abs(x)) < 1e-2


def test_errors():
    with pytest.raises(NonFiniteGradientError):
        SGD(0.1).step(np.zeros(2), np.array([np.nan, 0.0]))
    with pytest.raises(NonFiniteGradientError):
        Adam(0.1).step(np.zeros(2), np.array([np.inf, 0.0]))
    with pytest.raises(ValueError):
        SGD(0.1).step(np.zeros(2), np.zeros(3))
    with pytest.raises(ValueError):
        SgdState(0.0)
    with pytest.raises(ValueError):
        AdamState(-1.0)
    with pytest.raises(ValueError):
        make_optimizer("lbfgs", 0.1)
    assert isinstance(make_optimizer("sgd", 0.1), SGD)


@settings(max_examples=60, deadline=None)
@given(grads=st.lists(st.lists(st.floats(-1e6, 1e6), min_size=3, max_size=3),
                      min_size=1, max_size=20),
       lr=st.floats(1e-4, 1.0))
def test_adam_step_bounded(grads, lr):
    # bias-corrected Adam moves each coordinate by at most about lr / (1 - beta1)
    # per step; with equal-sign history the bound is lr itself
    opt = Adam(lr)
    x = np.zeros(3)
    for g in grads:
        x_new = opt.step(x, np.array(g))
        assert np.all(np.abs(x_new - x) <= lr * (1 - 0.9) / np.sqrt(1 - 0.999) * 1.0001 + 1e-15)
        x = x_new
