"""Adam with decoupled weight decay and a single-cycle cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..utils import ShapeError

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    """``base_lr * (1 + cos(pi * step / total)) / 2``, no restarts."""
    if total_steps <= 0:
        return base_lr
    step = min(max(step, 0), total_steps)
    return max(0.0, base_lr * (1.0 + math.cos(math.pi * step / total_steps)) / 2.0)


@dataclass
class OptimizerState:
    base_lr: float
    weight_decay: float = 0.0
    total_steps: int = 0
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def current_lr(self) -> float:
        if self.total_steps <= 0:
            return self.base_lr
        return cosine_lr(self.step, self.total_steps, self.base_lr)


def adam_step(
    state: OptimizerState,
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
) -> dict[str, np.ndarray]:
    """One update; returns new parameter arrays and advances *state*."""
    lr = state.current_lr()
    state.step += 1
    t = state.step
    bc1 = 1.0 - BETA1 ** t
    bc2 = 1.0 - BETA2 ** t

    updated: dict[str, np.ndarray] = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1.0 - BETA1) * g if m is None else BETA1 * m + (1.0 - BETA1) * g
        v = (1.0 - BETA2) * g * g if v is None else BETA2 * v + (1.0 - BETA2) * g * g
        state.m[name], state.v[name] = m, v

        new = p * (1.0 - lr * state.weight_decay) if state.weight_decay else p.copy()
        new -= lr * (m / bc1) / (np.sqrt(v / bc2) + EPS)
        updated[name] = new
    return updated
