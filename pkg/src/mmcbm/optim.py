"""Adam optimizer and early stopping shared by both trainable heads."""

from __future__ import annotations

from typing import Dict, Optional

import numpy as np

Params = Dict[str, np.ndarray]


class Adam:
    """Adam with bias-corrected moments; weight decay is added to the raw
    gradient (classic coupled form), so lr=0 leaves parameters untouched.
    """

    def __init__(self, lr: float, weight_decay: float = 0.0,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self._m: Params = {}
        self._v: Params = {}

    def step(self, params: Params, grads: Params) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in params.items():
            g = grads[name]
            if self.weight_decay:
                g = g + self.weight_decay * p
            if name not in self._m:
                self._m[name] = np.zeros_like(p)
                self._v[name] = np.zeros_like(p)
            m = self._m[name]
            v = self._v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1 ** self.t)
            v_hat = v / (1 - b2 ** self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class EarlyStopper:
    """Stop after `patience` epochs without a `min_delta` improvement in
    validation loss.  The kept snapshot is the minimum loss observed, so the
    restored checkpoint is never worse than anything seen.
    """

    def __init__(self, patience: int = 20, min_delta: float = 1e-4):
        self.patience = patience
        self.min_delta = min_delta
        self.best_loss = np.inf
        self.best_params: Optional[Params] = None
        self._reference = np.inf
        self._wait = 0

    def update(self, val_loss: float, params: Params) -> bool:
        """Record this epoch's validation loss; returns True to stop."""
        if val_loss < self.best_loss:
            self.best_loss = val_loss
            self.best_params = {k: v.copy() for k, v in params.items()}
        if val_loss < self._reference - self.min_delta:
            self._reference = val_loss
            self._wait = 0
        else:
            self._wait += 1
        return self._wait >= self.patience
