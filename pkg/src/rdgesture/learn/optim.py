"""Adam with decoupled weight decay, operating on a flat parameter vector in place."""

from __future__ import annotations

import numpy as np


class Adam:
    def __init__(self, params: np.ndarray, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        if lr <= 0 or eps <= 0 or weight_decay < 0:
            raise ValueError("lr and eps must be positive, weight_decay non-negative")
        if not all(0 <= b < 1 for b in betas):
            raise ValueError("betas must lie in [0, 1)")
        self.params = params
        self.lr, self.eps, self.weight_decay = lr, eps, weight_decay
        self.b1, self.b2 = betas
        self.m = np.zeros_like(params)
        self.v = np.zeros_like(params)
        self.t = 0

    def step(self, grad: np.ndarray) -> None:
        """p <- p*(1 - lr*wd) - lr * m_hat / (sqrt(v_hat) + eps)."""
        if grad.shape != self.params.shape:
            raise ValueError("gradient shape does not match parameters")
        self.t += 1
        self.m *= self.b1
        self.m += (1 - self.b1) * grad
        self.v *= self.b2
        self.v += (1 - self.b2) * grad * grad
        m_hat = self.m / (1 - self.b1**self.t)
        v_hat = self.v / (1 - self.b2**self.t)
        if self.weight_decay:
            self.params *= self.params.dtype.type(1 - self.lr * self.weight_decay)
        self.params -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(self.params.dtype)
