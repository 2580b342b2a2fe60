"""Adam with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .tensor import Tensor


class NumericalError(FloatingPointError):
    pass


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


class Adam:
    """Adam (Kingma & Ba) over a name -> parameter mapping.

    ``beta1``/``beta2`` default to 0.8/0.999; there is no weight decay.
    """

    def __init__(self, params: Mapping[str, Tensor], lr: float = 5e-4, beta1: float = 0.8, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        if not 0 < beta1 < beta2 < 1:
            raise ValueError("need 0 < beta1 < beta2 < 1")
        self.params = dict(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = AdamState()

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        for name, p in self.params.items():
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NumericalError(f"non-finite gradient in parameter {name!r} at step {self.state.step + 1}")
        self.state.step += 1
        t = self.state.step
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self.state.m.get(name)
            if m is None:
                m = self.state.m[name] = np.zeros_like(p.data)
                self.state.v[name] = np.zeros_like(p.data)
            v = self.state.v[name]
            with np.errstate(over="ignore", invalid="ignore"):
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * g * g
                p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            if not np.all(np.isfinite(p.data)):
                raise NumericalError(f"update made parameter {name!r} non-finite at step {t}")


def clip_grad_norm(params: Mapping[str, Tensor], max_norm: float) -> float:
    """Rescale all gradients so their joint L2 norm is at most ``max_norm``; returns the norm before clipping."""
    norm = float(np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params.values() if p.grad is not None)))
    if norm > max_norm > 0:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale
    return norm


def adam_step(params: Mapping[str, Tensor], state: AdamState, lr: float = 5e-4, beta1: float = 0.8, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """Functional single update; mutates ``params`` in place and returns the state."""
    opt = Adam(params, lr, beta1, beta2, eps)
    opt.state = state
    opt.step()
    return opt.state
