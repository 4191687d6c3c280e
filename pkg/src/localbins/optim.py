"""AdamW with a flat-then-cosine learning-rate schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


def lr_at(it: int, total: int, base_lr: float, final_factor: float = 1e-4, flat_fraction: float = 0.7) -> float:
    """Learning rate at iteration ``it`` of ``total``.

    Constant ``base_lr`` up to ``flat_fraction * total``, then cosine decay
    reaching ``base_lr * final_factor`` at the last iteration.
    """
    start = flat_fraction * total
    if it <= start:
        return base_lr
    span = (total - 1) - start
    final = base_lr * final_factor
    if span <= 0:
        return final
    progress = min((it - start) / span, 1.0)
    return final + (base_lr - final) * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class AdamW:
    base_lr: float = 3.57e-4
    weight_decay: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    final_factor: float = 1e-4
    flat_fraction: float = 0.7
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: dict[str, Tensor], it: int, total: int) -> float:
        """Update ``params`` in place from their ``grad``; returns the lr used."""
        if it >= total:
            raise ValueError(f"iteration {it} outside schedule of {total}")
        lr = lr_at(it, total, self.base_lr, self.final_factor, self.flat_fraction)
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for name, p in params.items():
            g = p.grad
            if g is None:
                continue
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data *= 1.0 - lr * self.weight_decay
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        return lr


def adamw_step(opt: AdamW, params: dict[str, Tensor], it: int, total_iters: int) -> dict[str, Tensor]:
    opt.step(params, it, total_iters)
    return params
