"""AdamW with decoupled weight decay, and EMA parameter tracking.

Defaults follow the shared training setup: betas (0.95, 0.99), EMA decay
0.999. Weight decay and epsilon are config decisions (0.0 and 1e-8), not
Appendix values.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Var


class GradientError(ValueError):
    """A gradient contained NaN; the optimizer step was aborted."""


class AdamW:
    def __init__(self, params: list[Var], lr: float, betas=(0.95, 0.99),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self._m = [np.zeros_like(p.value) for p in self.params]
        self._v = [np.zeros_like(p.value) for p in self.params]

    def step(self) -> None:
        """One update; reads .grad of each param, mutates .value in place."""
        for p in self.params:
            if p.grad is None:
                raise ValueError("param has no gradient; run backward() first")
            if np.isnan(p.grad).any():
                raise GradientError("NaN gradient; step aborted")
            if p.grad.shape != p.value.shape:
                raise ValueError("gradient shape mismatch")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if self.weight_decay:
                p.value *= 1.0 - self.lr * self.weight_decay
            p.value -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


class Ema:
    """Shadow copies: shadow <- decay*shadow + (1-decay)*param."""

    def __init__(self, params: list[Var], decay: float = 0.999):
        self.params = list(params)
        self.decay = decay
        self.shadow = [p.value.copy() for p in self.params]

    def update(self) -> None:
        d = self.decay
        for s, p in zip(self.shadow, self.params):
            if s.shape != p.value.shape:
                raise ValueError("EMA shadow shape mismatch")
            s *= d
            s += (1.0 - d) * p.value

    def shadow_values(self) -> list[np.ndarray]:
        return [s.copy() for s in self.shadow]
