"""Adam with linear warm-up followed by linear decay."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from .tensor import Tensor


def warmup_linear(step: int, total: int, warmup: float) -> float:
    """Learning-rate multiplier for update ``step`` (1-based) of ``total``."""
    warm = max(1, int(round(warmup * total)))
    if step <= warm:
        return step / warm
    return max(0.0, (total - step) / max(1, total - warm))


class Adam:
    def __init__(
        self,
        params: Mapping[str, Tensor],
        lr: float,
        total_steps: int,
        warmup: float = 0.1,
        betas=(0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params = dict(params)
        self.lr = lr
        self.total_steps = max(1, total_steps)
        self.warmup = warmup
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    @property
    def current_lr(self) -> float:
        return self.lr * warmup_linear(max(self.t, 1), self.total_steps, self.warmup)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.t += 1
        lr = self.lr * warmup_linear(self.t, self.total_steps, self.warmup)
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            m, v = self.m[name], self.v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
