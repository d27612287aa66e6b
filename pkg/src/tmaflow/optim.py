"""AdamW with a one-cycle learning-rate schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, global_norm


@dataclass
class OneCycle:
    """Linear warmup to ``peak_lr`` then cosine decay to ``peak_lr / div``.

    The warmup starts from ``peak_lr / div`` as well.
    """

    peak_lr: float
    total_steps: int
    warmup_frac: float = 0.05
    div: float = 25.0

    def __call__(self, step: int) -> float:
        lo = self.peak_lr / self.div
        total = max(self.total_steps, 1)
        warm = max(int(round(self.warmup_frac * total)), 1)
        if step < warm:
            return lo + (self.peak_lr - lo) * step / warm
        span = max(total - warm, 1)
        frac = min((step - warm) / span, 1.0)
        return lo + 0.5 * (self.peak_lr - lo) * (1 + math.cos(math.pi * frac))


@dataclass
class OptimizerState:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    step: int = 0
    schedule: OneCycle | None = None
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def current_lr(self) -> float:
        # the schedule is indexed by completed steps
        return self.schedule(self.step) if self.schedule is not None else self.lr


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale ``grads`` in place so their global L2 norm is at most ``max_norm``."""
    norm = global_norm(grads.values())
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-6)
        for k in grads:
            grads[k] = grads[k] * scale
    return norm


def optimizer_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
                   state: OptimizerState) -> tuple[dict[str, Tensor], OptimizerState]:
    """One AdamW update (decoupled weight decay), in place.

    Parameters without an entry in ``grads`` are treated as having zero gradient.
    """
    lr = state.current_lr()
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** t
    c2 = 1 - b2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data *= 1 - lr * state.weight_decay
        p.data -= (lr * update).astype(p.dtype, copy=False)
    return params, state
