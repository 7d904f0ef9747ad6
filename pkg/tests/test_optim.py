"""Optimizer update rules."""

import numpy as np
import pytest

from agkit import autodiff as ad
from agkit.autodiff import Tensor
from agkit.optim import Adam, NumericAbort, SGDNesterov, make_optimizer


def adam_scalar_sim(grad_of, theta0, lr, steps, beta1=0.9, beta2=0.999, eps=1e-8):
    """Independent pure-python Adam simulation."""
    theta, m, v = theta0, 0.0, 0.0
    for t in range(1, steps + 1):
        g = grad_of(theta)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mhat = m / (1 - beta1**t)
        vhat = v / (1 - beta2**t)
        theta -= lr * mhat / (np.sqrt(vhat) + eps)
    return theta


def test_adam_quadratic_converges_and_matches_simulation():
    theta = Tensor(np.array(1.0), requires_grad=True, name="theta")
    opt = Adam(lr=1e-1)
    for _ in range(200):
        theta.zero_grad()
        loss = ad.mul(theta, theta)
        loss.backward()
        opt.step({"theta": theta})
    expected = adam_scalar_sim(lambda t: 2.0 * t, 1.0, 1e-1, 200)
    assert abs(theta.data.item()) < 1e-2
    assert theta.data.item() == pytest.approx(expected, abs=1e-12)


def test_zero_gradient_leaves_parameters_unchanged():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True, name="p")
    p.grad = np.zeros(2)
    opt = SGDNesterov(lr=0.5, momentum=0.0)
    opt.step({"p": p})
    assert (p.data == np.array([1.0, -2.0])).all()


def test_adam_first_step_magnitude_is_lr():
    # bias-corrected first step is lr * g/(|g| + eps'): within ~1% of lr for
    # any gradient scale not vanishing against Adam's eps
    for scale in (1e-6, 1.0, 1e6):
        p = Tensor(np.array(5.0), requires_grad=True, name="p")
        p.grad = np.array(scale)
        opt = Adam(lr=1e-3)
        opt.step({"p": p})
        assert abs(p.data.item() - 5.0) == pytest.approx(1e-3, rel=0.02)


def test_nan_gradient_rejected_with_name():
    p = Tensor(np.array([1.0]), requires_grad=True, name="enc1.kernel")
    p.grad = np.array([np.nan])
    with pytest.raises(NumericAbort, match="enc1.kernel"):
        Adam().step({"enc1.kernel": p})
    with pytest.raises(NumericAbort, match="enc1.kernel"):
        SGDNesterov().step({"enc1.kernel": p})


def test_nesterov_matches_hand_rollout():
    p = Tensor(np.array(0.0), requires_grad=True, name="p")
    opt = SGDNesterov(lr=0.1, momentum=0.9)
    grads = [1.0, -0.5, 0.25]
    v, x = 0.0, 0.0
    for g in grads:
        p.grad = np.array(g)
        opt.step({"p": p})
        v = 0.9 * v + g
        x -= 0.1 * (g + 0.9 * v)
        assert p.data.item() == pytest.approx(x, abs=1e-15)


def test_make_optimizer_kinds():
    assert isinstance(make_optimizer("adam", 1e-3), Adam)
    assert isinstance(make_optimizer("sgd-nesterov", 0.1), SGDNesterov)
    with pytest.raises(ValueError):
        make_optimizer("lbfgs", 0.1)


def test_deterministic_state_evolution():
    def run():
        p = Tensor(np.array([1.0, 2.0]), requires_grad=True, name="p")
        opt = Adam(lr=1e-2)
        rng = np.random.default_rng(0)
        for _ in range(50):
            p.grad = rng.normal(size=2)
            opt.step({"p": p})
        return p.data.copy()

    assert (run() == run()).all()
