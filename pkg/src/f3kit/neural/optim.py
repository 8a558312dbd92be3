"""AdamW with decoupled weight decay and a warmup-cosine schedule."""

from __future__ import annotations

import math

import numpy as np


def warmup_cosine(base_rate, warmup_steps, total_steps):
    """Rate schedule: linear 0 -> base over `warmup_steps`, then cosine
    decay to 0 at `total_steps`.  Units are whatever the caller steps by
    (epochs here)."""
    if not 0 <= warmup_steps < total_steps:
        raise ValueError("need 0 <= warmup_steps < total_steps")

    def rate_at(step):
        if step <= warmup_steps:
            return base_rate * step / max(warmup_steps, 1)
        frac = (step - warmup_steps) / (total_steps - warmup_steps)
        frac = min(max(frac, 0.0), 1.0)
        return base_rate * 0.5 * (1.0 + math.cos(math.pi * frac))

    return rate_at


class AdamW:
    """Decoupled-weight-decay Adam over a ParamStore."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=0.0):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, lr=None):
        if not self.params.grads:
            raise RuntimeError("AdamW.step called with no accumulated gradients")
        lr = self.lr if lr is None else lr
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name in sorted(self.params):
            g = self.params.grads.get(name)
            if g is None:
                continue
            m = self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            v = self.v[name] = b2 * self.v[name] + (1.0 - b2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * self.params[name]
            self.params[name] = self.params[name] - lr * update
        self.params.zero_grads()
