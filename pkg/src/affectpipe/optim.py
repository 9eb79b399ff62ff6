"""Gradient-descent optimizers over a ParameterSet."""

from __future__ import annotations

import numpy as np

from .layers import ParameterSet


class MomentumSgd:
    """Heavy-ball SGD: v <- momentum*v + g; w <- w - lr*v."""

    def __init__(self, lr: float = 1e-2, momentum: float = 0.9):
        self.lr = lr
        self.momentum = momentum
        self._velocity: dict[str, np.ndarray] = {}

    def step(self, params: ParameterSet):
        for name, p in params.items():
            if p.grad is None:
                continue
            v = self._velocity.get(name)
            if v is None:
                v = np.zeros_like(p.data)
            v = self.momentum * v + p.grad
            self._velocity[name] = v
            p.data -= self.lr * v


class Adam:
    """Adam with standard bias-corrected first/second moments."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._t = 0

    def step(self, params: ParameterSet):
        self._t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in params.items():
            if p.grad is None:
                continue
            g = p.grad
            m = self._m.get(name)
            v = self._v.get(name)
            m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
            v = (1 - b2) * g**2 if v is None else b2 * v + (1 - b2) * g**2
            self._m[name], self._v[name] = m, v
            m_hat = m / (1 - b1**self._t)
            v_hat = v / (1 - b2**self._t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(name: str, lr: float | None = None, momentum: float = 0.9):
    """Build an optimizer by name ('sgd' or 'adam') with library defaults."""
    if name == "sgd":
        return MomentumSgd(lr=1e-2 if lr is None else lr, momentum=momentum)
    if name == "adam":
        return Adam(lr=1e-3 if lr is None else lr)
    raise ValueError(f"unknown optimizer {name!r}")
