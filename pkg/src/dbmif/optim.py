"""Adam with bias correction under a cosine-annealed learning rate."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import PreconditionError


@dataclass
class CosineSchedule:
    initial_lr: float
    total_steps: int
    floor: float = 0.0

    def lr_at(self, step: int) -> float:
        t = min(max(step, 0), self.total_steps) / max(self.total_steps, 1)
        return self.floor + (self.initial_lr - self.floor) * (1.0 + math.cos(math.pi * t)) / 2.0


@dataclass
class AdamState:
    schedule: CosineSchedule
    beta1: float = 0.5
    beta2: float = 0.9
    eps: float = 1e-8
    step: int = 0
    first: dict[int, np.ndarray] = field(default_factory=dict)
    second: dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def lr(self) -> float:
        return self.schedule.lr_at(self.step)


def adam_step(state: AdamState, params: list[Tensor], names: list[str] | None = None) -> float:
    """Apply one Adam update at the scheduled LR, zero the grads, advance the step.

    Moments are keyed by position in ``params``, so the list order must be
    stable across calls. Returns the LR that was used.
    """
    for i, p in enumerate(params):
        if p.grad is None:
            label = names[i] if names else (p.name or f"parameter #{i}")
            raise PreconditionError(f"adam_step: {label} has no gradient")
    lr = state.lr
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for i, p in enumerate(params):
        g = p.grad.astype(p.data.dtype, copy=False)
        m = state.first.get(i)
        v = state.second.get(i)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.first[i] = m
        state.second[i] = v
        update = (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.data.dtype)
        p.data = p.data - update
        p.grad = None
    state.step = t
    return lr
