"""Adam with L2 weight decay and the warm-up / inverse-square-root schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class OptimizerConfig:
    beta1: float = 0.9
    beta2: float = 0.98
    weight_decay: float = 1e-9
    adam_eps: float = 1e-8
    warmup_steps: int = 1000
    peak_lr: float = 1e-3

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.warmup_steps < 1:
            raise ValueError("warmup_steps must be >= 1")
        if self.peak_lr <= 0 or self.adam_eps <= 0 or self.weight_decay < 0:
            raise ValueError("peak_lr and adam_eps must be positive, weight_decay non-negative")


def noam_lr(step: int, cfg: OptimizerConfig) -> float:
    """Linear ramp to ``peak_lr`` over the warm-up, then ~ 1/sqrt(step)."""
    if step < 1:
        raise ValueError("step counts from 1")
    return cfg.peak_lr * min(step / cfg.warmup_steps, math.sqrt(cfg.warmup_steps / step))


@dataclass
class AdamState:
    step: int
    m: list
    v: list

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls(0, [np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState,
              cfg: OptimizerConfig, lr: float) -> None:
    """One in-place Adam update; weight decay enters as ``g + wd * theta``."""
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ValueError("params, grads and optimizer state differ in length")
    state.step += 1
    t = state.step
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    for theta, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != theta.shape or m.shape != theta.shape:
            raise ValueError(f"shape mismatch {theta.shape} / {g.shape} / {m.shape}")
        if cfg.weight_decay:
            g = g + cfg.weight_decay * theta
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        theta -= (lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)).astype(theta.dtype)


class Adam:
    """Binds :func:`adam_step` to a module's parameters."""

    def __init__(self, parameters, cfg: OptimizerConfig):
        self.parameters = list(parameters)
        self.cfg = cfg
        self.state = AdamState.zeros_like([p.data for p in self.parameters])

    def step(self, lr: float) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.parameters]
        adam_step([p.data for p in self.parameters], grads, self.state, self.cfg, lr)
