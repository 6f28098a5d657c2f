"""Adam, parameter clipping and the one-cycle learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0


@dataclass
class Adam:
    params: list
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    states: list[AdamState] = field(default_factory=list)

    def __post_init__(self):
        self.params = list(self.params)
        if not self.states:
            self.states = [AdamState(np.zeros(p.shape, np.float64), np.zeros(p.shape, np.float64))
                           for p in self.params]

    def step(self, lr: float) -> None:
        adam_step(self.params, self.states, lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def adam_step(params, states, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update; parameters without a gradient are skipped."""
    for p, st in zip(params, states):
        if p.grad is None:
            continue
        g = np.asarray(p.grad, dtype=np.float64)
        st.step += 1
        st.m = beta1 * st.m + (1 - beta1) * g
        st.v = beta2 * st.v + (1 - beta2) * g * g
        mhat = st.m / (1 - beta1**st.step)
        vhat = st.v / (1 - beta2**st.step)
        p.data = (p.data - lr * mhat / (np.sqrt(vhat) + eps)).astype(p.dtype)


def clip_params(params, lo: float, hi: float) -> None:
    for p in params:
        np.clip(p.data, lo, hi, out=p.data)


@dataclass(frozen=True)
class OneCycleSchedule:
    """Linear warm-up from ``max_lr/div`` to ``max_lr``, then cosine decay to ``max_lr/final_div``."""

    max_lr: float
    total_steps: int
    warmup: float = 0.3
    div: float = 25.0
    final_div: float = 1e4

    def __call__(self, step: int) -> float:
        return onecycle_lr(step, self.total_steps, self.max_lr, self.warmup, self.div, self.final_div)


def onecycle_lr(step: int, total_steps: int, max_lr: float = 1e-3, warmup: float = 0.3,
                div: float = 25.0, final_div: float = 1e4) -> float:
    start = max_lr / div
    end = max_lr / final_div
    up = max(int(round(warmup * total_steps)), 1)
    step = min(max(step, 0), total_steps)
    if step < up:
        return start + (max_lr - start) * step / up
    down = max(total_steps - up, 1)
    frac = min((step - up) / down, 1.0)
    return end + (max_lr - end) * 0.5 * (1.0 + math.cos(math.pi * frac))
