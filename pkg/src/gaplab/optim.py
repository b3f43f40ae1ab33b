"""Momentum SGD, Adam and RMSProp.

Weight decay is coupled L2: ``g <- g + lambda * w`` before any moment
update, so a zero coefficient reproduces a decay-free run bit for bit.
Moment buffers are keyed by position in the parameter list and stay
shape-congruent with their parameters.
"""

from __future__ import annotations

import numpy as np


class Optimizer:
    def __init__(self, params: list[np.ndarray], lr: float, weight_decay: float = 0.0):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.t = 0

    def _decayed(self, i: int, grad: np.ndarray) -> np.ndarray:
        if self.weight_decay:
            return grad + np.asarray(self.weight_decay, dtype=grad.dtype) * self.params[i]
        return grad

    def step(self, grads: list[np.ndarray]) -> None:
        raise NotImplementedError


class MomentumSGD(Optimizer):
    def __init__(self, params, lr, weight_decay=0.0, momentum=0.9):
        super().__init__(params, lr, weight_decay)
        self.momentum = momentum
        self.buf = [np.zeros_like(p) for p in params]

    def step(self, grads):
        self.t += 1
        for i, (p, g) in enumerate(zip(self.params, grads)):
            g = self._decayed(i, g)
            self.buf[i] = self.momentum * self.buf[i] + g
            p -= np.asarray(self.lr, dtype=p.dtype) * self.buf[i]


class Adam(Optimizer):
    def __init__(self, params, lr, weight_decay=0.0, beta1=0.9, beta2=0.999, eps=1e-3):
        super().__init__(params, lr, weight_decay)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads):
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for i, (p, g) in enumerate(zip(self.params, grads)):
            g = self._decayed(i, g)
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            m_hat = self.m[i] / b1t
            v_hat = self.v[i] / b2t
            p -= np.asarray(self.lr, dtype=p.dtype) * m_hat / (np.sqrt(v_hat) + self.eps)


class RMSProp(Optimizer):
    def __init__(self, params, lr, weight_decay=0.0, decay=0.9, eps=1e-8):
        super().__init__(params, lr, weight_decay)
        self.decay = decay
        self.eps = eps
        self.acc = [np.zeros_like(p) for p in params]

    def step(self, grads):
        self.t += 1
        for i, (p, g) in enumerate(zip(self.params, grads)):
            g = self._decayed(i, g)
            self.acc[i] = self.decay * self.acc[i] + (1 - self.decay) * g * g
            p -= np.asarray(self.lr, dtype=p.dtype) * g / (np.sqrt(self.acc[i]) + self.eps)


def make_optimizer(kind: str, params: list[np.ndarray], lr: float, weight_decay: float) -> Optimizer:
    if kind == "momentum-sgd":
        return MomentumSGD(params, lr, weight_decay)
    if kind == "adam":
        return Adam(params, lr, weight_decay)
    if kind == "rmsprop":
        return RMSProp(params, lr, weight_decay)
    raise ValueError(f"unknown optimizer {kind!r}")
