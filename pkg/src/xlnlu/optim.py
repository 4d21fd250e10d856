"""Optimizers: plain SGD with a perplexity-driven decay schedule, and Adam.

Updates are in-place on `Tensor.data` and deterministic given the state.
A `None` gradient is treated as all-zeros, so applying a zero gradient never
moves a parameter (Adam's bias-corrected zero step is exactly zero as well).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor


@dataclass
class OptimizerState:
    """State for one optimizer instance (kind "sgd" or "adam")."""

    kind: str = "adam"
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    best_ppl: float = math.inf
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if self.lr <= 0:
            raise ValueError("learning rate must be > 0")


def adam_step(state: OptimizerState, params: list[Tensor], grads=None) -> list[Tensor]:
    """One Adam update with bias correction; increments the step count."""
    if state.kind != "adam":
        raise ValueError("adam_step on a non-adam state")
    if grads is None:
        grads = [p.grad for p in params]
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.data.shape}")
        if i not in state.m:
            state.m[i] = np.zeros_like(p.data)
            state.v[i] = np.zeros_like(p.data)
        m = state.m[i]
        v = state.v[i]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params


def sgd_step(state: OptimizerState, params: list[Tensor], grads=None) -> list[Tensor]:
    if state.kind != "sgd":
        raise ValueError("sgd_step on a non-sgd state")
    if grads is None:
        grads = [p.grad for p in params]
    state.step_count += 1
    for p, g in zip(params, grads):
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.data.shape}")
        p.data -= state.lr * g
    return params


def sgd_ppl_decay(state: OptimizerState, epoch_val_ppl: float) -> float:
    """Multiply lr by 0.99 when validation perplexity regressed past the best seen.

    Returns the (possibly unchanged) learning rate. The rate never increases.
    """
    if not math.isfinite(epoch_val_ppl) or epoch_val_ppl <= 0:
        raise ValueError(f"perplexity must be finite and positive, got {epoch_val_ppl}")
    if epoch_val_ppl > state.best_ppl:
        state.lr *= 0.99
    state.best_ppl = min(state.best_ppl, epoch_val_ppl)
    return state.lr


def global_grad_norm(params: list[Tensor]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    return math.sqrt(total)


def clip_global_norm(params: list[Tensor], max_norm: float = 5.0) -> float:
    """Scale all gradients so their global L2 norm is at most `max_norm`.

    Returns the pre-clip norm.
    """
    norm = global_grad_norm(params)
    if norm > max_norm:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm
