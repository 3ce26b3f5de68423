"""Adam with decoupled weight decay, gradient clipping, and the one-cycle schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor


@dataclass
class OptimState:
    """Per-parameter first/second moment buffers plus the shared step counter."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: OptimState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.01,
) -> None:
    """One update over all parameters, in sorted-name order for determinism.

    Decoupled weight decay is applied first, then the bias-corrected Adam
    update from the gradient moments.
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name in sorted(params):
        p = params[name]
        g = grads[name]
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape mismatch for {name}: {g.shape} vs {p.data.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        if weight_decay:
            p.data -= lr * weight_decay * p.data
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    for name in sorted(grads):
        total += float((grads[name] ** 2).sum())
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def onecycle_lr(
    step: int,
    total_steps: int,
    max_lr: float = 0.001,
    pct_start: float = 0.3,
    div_factor: float = 25.0,
    final_div: float = 1e4,
) -> float:
    """Cosine warmup to max_lr over pct_start of the run, cosine anneal after."""
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    initial = max_lr / div_factor
    final = max_lr / final_div
    warm = pct_start * total_steps
    if step <= warm:
        t = step / warm if warm > 0 else 1.0
        return initial + (max_lr - initial) * 0.5 * (1.0 - math.cos(math.pi * t))
    t = (step - warm) / (total_steps - warm)
    return final + (max_lr - final) * 0.5 * (1.0 + math.cos(math.pi * t))
