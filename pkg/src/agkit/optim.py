"""Parameter update rules: SGD with Nesterov momentum and Adam."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor


class NumericAbort(RuntimeError):
    """Raised when training hits a non-finite loss or gradient."""


class SGDNesterov:
    """SGD with Nesterov momentum in the common simplified form:
    v <- rho*v + g; p <- p - lr*(g + rho*v).

    ``param_lr_scale`` optionally maps a parameter name to a learning-rate
    multiplier (e.g. to let gate parameters adapt faster than the backbone).
    """

    def __init__(self, lr: float = 0.1, momentum: float = 0.9, param_lr_scale=None):
        self.lr = lr
        self.momentum = momentum
        self.param_lr_scale = param_lr_scale
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, Tensor]) -> None:
        for name, p in params.items():
            g = _checked_grad(name, p)
            if g is None:
                continue
            lr = self.lr if self.param_lr_scale is None else self.lr * self.param_lr_scale(name)
            v = self.velocity.get(name)
            if v is None:
                v = np.zeros_like(p.data)
                self.velocity[name] = v
            v *= self.momentum
            v += g
            p.data -= lr * (g + self.momentum * v)


class Adam:
    """Adam with bias correction (Kingma-Ba defaults unless overridden)."""

    def __init__(self, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 param_lr_scale=None):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.param_lr_scale = param_lr_scale
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, Tensor]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for name, p in params.items():
            g = _checked_grad(name, p)
            if g is None:
                continue
            lr = self.lr if self.param_lr_scale is None else self.lr * self.param_lr_scale(name)
            m = self.m.setdefault(name, np.zeros_like(p.data))
            v = self.v.setdefault(name, np.zeros_like(p.data))
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def _checked_grad(name: str, p: Tensor):
    if p.grad is None:
        return None
    if not np.isfinite(p.grad).all():
        raise NumericAbort(f"non-finite gradient for parameter {name!r}")
    return p.grad


def make_optimizer(kind: str, lr: float, momentum: float = 0.9, beta1: float = 0.9, beta2: float = 0.999):
    kind = kind.lower()
    if kind in ("sgd", "sgd-nesterov", "nesterov"):
        return SGDNesterov(lr=lr, momentum=momentum)
    if kind == "adam":
        return Adam(lr=lr, beta1=beta1, beta2=beta2)
    raise ValueError(f"unknown optimizer kind {kind!r}")


def zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.zero_grad()
