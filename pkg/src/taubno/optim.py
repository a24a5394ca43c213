"""AdamW with decoupled weight decay and a cosine-annealed learning rate."""

from __future__ import annotations

import math

import numpy as np


def cosine_lr(epoch, lr0=8e-4, lr_min=2e-6, epochs=1000):
    """lr_min + (lr0 - lr_min) (1 + cos(pi epoch / epochs)) / 2, clamped to [0, epochs]."""
    e = min(max(epoch, 0), epochs)
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * e / epochs))


class AdamW:
    """Adam with decoupled weight decay (torch defaults apart from the rate).

    Every step: p <- p - lr * wd * p, then the bias-corrected Adam update.
    """

    def __init__(self, params, lr=8e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            if lr == 0:
                continue  # parameters stay bit-identical
            p.data *= 1.0 - lr * self.weight_decay
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self):
        return {"t": self.t, "m": [a.copy() for a in self.m], "v": [a.copy() for a in self.v]}


def adamw_step(params, grads, state, lr_t, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
    """Functional form on raw arrays; ``state`` holds 'm', 'v', 'step' (created if empty)."""
    if not state:
        state.update(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params],
                     step=0)
    state["step"] += 1
    t = state["step"]
    b1, b2 = betas
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        m[...] = b1 * m + (1 - b1) * g
        v[...] = b2 * v + (1 - b2) * g * g
        if lr_t == 0:
            continue
        p *= 1.0 - lr_t * weight_decay
        p -= lr_t * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
