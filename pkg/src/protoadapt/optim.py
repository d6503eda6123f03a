"""SGD with heavy-ball momentum."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import Tensor


class SGD:
    def __init__(self, params: Sequence[Tensor], lr: float, momentum: float = 0.9, clip: float | None = None):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.clip = clip
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        scale = 1.0
        if self.clip is not None:
            norm = np.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in self.params if p.grad is not None))
            if norm > self.clip:
                scale = self.clip / norm
        for p, v in zip(self.params, self.velocity):
            if p.grad is None or not p.requires_grad:
                continue
            v *= self.momentum
            v += np.float32(scale) * p.grad
            p.data = p.data - np.float32(self.lr) * v


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None or not p.requires_grad:
                continue
            m *= self.b1
            m += (1.0 - self.b1) * p.grad
            v *= self.b2
            v += (1.0 - self.b2) * p.grad * p.grad
            p.data = (p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)
