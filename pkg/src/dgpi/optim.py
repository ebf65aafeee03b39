"""First-order update rules (plain SGD and Adam)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import NumericError


@dataclass
class Optimizer:
    kind: str = "adam"
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    steps: int = 0
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")

    def step(self, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
        """Return the updated parameter vector; ``params`` is not modified."""
        params = np.asarray(params, dtype=np.float64)
        grads = np.asarray(grads, dtype=np.float64)
        if grads.shape != params.shape:
            raise ValueError(f"gradient shape {grads.shape} != parameter shape {params.shape}")
        bad = np.flatnonzero(~np.isfinite(grads))
        if bad.size:
            raise NumericError(f"non-finite gradient at index {int(bad[0])}")
        self.steps += 1
        if self.kind == "sgd":
            return params - self.lr * grads
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grads
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grads * grads
        m_hat = self.m / (1.0 - self.beta1 ** self.steps)
        v_hat = self.v / (1.0 - self.beta2 ** self.steps)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
