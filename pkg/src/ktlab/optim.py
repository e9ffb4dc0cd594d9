"""Decoupled-weight-decay Adam over a dict of named arrays.

Shared by the transformer and the recurrent tracer. Weight decay applies
only to matrices (ndim >= 2); gains and biases are left undecayed. Gradients
are clipped by global norm before the moment updates.
"""

from __future__ import annotations

import numpy as np


class AdamW:
    def __init__(
        self,
        shapes: dict[str, np.ndarray],
        learning_rate: float,
        beta1: float = 0.9,
        beta2: float = 0.99,
        eps: float = 1e-8,
        weight_decay: float = 0.0,
        clip_norm: float | None = 1.0,
    ):
        self.lr = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.clip_norm = clip_norm
        self.m = {k: np.zeros_like(v) for k, v in shapes.items()}
        self.v = {k: np.zeros_like(v) for k, v in shapes.items()}
        self.t = 0

    def step(self, tensors: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        scale = 1.0
        if self.clip_norm is not None:
            total = 0.0
            for g in grads.values():
                g64 = g.astype(np.float64, copy=False)
                total += float((g64 * g64).sum())
            norm = np.sqrt(total)
            if norm > self.clip_norm:
                scale = self.clip_norm / norm

        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            g = g * scale
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            update = (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)
            if tensors[k].ndim >= 2 and self.weight_decay > 0:
                tensors[k] -= self.lr * self.weight_decay * tensors[k]
            tensors[k] -= self.lr * update
