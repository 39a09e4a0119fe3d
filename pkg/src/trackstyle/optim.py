"""Adam parameter updates with bias correction and a non-finite guard."""

from __future__ import annotations

import logging

import numpy as np

log = logging.getLogger(__name__)


class Adam:
    """Standard Adam over a fixed, ordered list of parameter arrays.

    Updates happen in place. A step whose gradients contain non-finite
    values is skipped entirely (and logged) rather than poisoning the
    moment estimates.
    """

    def __init__(self, params: list[tuple[str, np.ndarray]],
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.names = [name for name, _ in params]
        self.params = [arr for _, arr in params]
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(arr) for arr in self.params]
        self.v = [np.zeros_like(arr) for arr in self.params]
        self.t = 0
        self.skipped = 0

    def step(self, grads: list[np.ndarray], lr: float) -> bool:
        """Apply one update; returns False if skipped on non-finite gradients."""
        if len(grads) != len(self.params):
            raise ValueError(f"expected {len(self.params)} gradient arrays, got {len(grads)}")
        for name, g in zip(self.names, grads):
            if not np.isfinite(g).all():
                self.skipped += 1
                log.warning("skipping update %d: non-finite gradient in %s", self.t + 1, name)
                return False
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m[...] = self.beta1 * m + (1.0 - self.beta1) * g
            v[...] = self.beta2 * v + (1.0 - self.beta2) * g * g
            p -= (lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)).astype(p.dtype)
        return True
