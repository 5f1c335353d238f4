"""Adaptive-moment optimizer with an inverse-square-root warmup
schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def learning_rate(step: int, base_lr: float, warmup_steps: int) -> float:
    """base_lr * min(step / warmup, sqrt(warmup / step)).

    Linear ramp to the peak (= base_lr, reached exactly at
    step == warmup), then inverse-square-root decay.
    """
    if step < 1:
        raise ValueError("schedule is defined for step >= 1")
    return base_lr * min(step / warmup_steps, (warmup_steps / step) ** 0.5)


@dataclass
class AdamState:
    """Per-parameter first/second moment buffers plus hyperparameters."""

    beta1: float = 0.9
    beta2: float = 0.997
    eps: float = 1e-9
    base_lr: float = 0.05
    warmup_steps: int = 400
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def current_lr(self) -> float:
        return learning_rate(max(self.step, 1), self.base_lr, self.warmup_steps)


def adam_step(params: dict, grads: dict[str, np.ndarray], state: AdamState) -> dict:
    """One adaptive-moment update, in place on the parameter tensors.

    With zero gradients the bias-corrected update is exactly zero, so
    parameters are unchanged.
    """
    state.step += 1
    lr = learning_rate(state.step, state.base_lr, state.warmup_steps)
    b1, b2 = state.beta1, state.beta2
    for name, param in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(param.values)
            state.v[name] = np.zeros_like(param.values)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** state.step)
        v_hat = v / (1.0 - b2 ** state.step)
        param.values -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params
