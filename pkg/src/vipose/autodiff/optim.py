from __future__ import annotations

import math

import numpy as np


def cosine_lr(lr0: float, lr_min: float, epoch: int, total_epochs: int) -> float:
    if not 0 <= epoch <= total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs}]")
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * epoch / total_epochs))


def sgd_step(params, grads, lr: float, momentum: float = 0.9, velocity=None):
    """One heavy-ball update on plain arrays: v <- m*v + g; p <- p - lr*v.

    Returns (new_params, new_velocity). ``velocity`` defaults to zeros.
    """
    if velocity is None:
        velocity = [np.zeros_like(p) for p in params]
    new_v = [momentum * v + g for v, g in zip(velocity, grads)]
    return [p - lr * v for p, v in zip(params, new_v)], new_v


class SGD:
    """SGD with momentum over parameter groups, each with its own learning rate."""

    def __init__(self, groups, momentum: float = 0.9):
        self.groups = [{"params": list(g["params"]), "lr": float(g["lr"]), "name": g.get("name", str(i))}
                       for i, g in enumerate(groups)]
        self.momentum = momentum
        self._velocity = {}

    def set_lr(self, name: str, lr: float):
        for g in self.groups:
            if g["name"] == name:
                g["lr"] = lr
                return
        raise KeyError(name)

    def zero_grad(self):
        for g in self.groups:
            for p in g["params"]:
                p.grad = None

    def step(self):
        for g in self.groups:
            lr = g["lr"]
            for p in g["params"]:
                if p.grad is None:
                    continue
                v = self._velocity.get(id(p))
                v = p.grad.copy() if v is None else self.momentum * v + p.grad
                self._velocity[id(p)] = v
                p.data -= (lr * v).astype(p.data.dtype)


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``."""
    grads = [p.grad for p in params if p.grad is not None]
    norm = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


class Adam(SGD):
    """Adam over parameter groups; same group interface as SGD."""

    def __init__(self, groups, betas=(0.9, 0.999), eps: float = 1e-8):
        super().__init__(groups, momentum=betas[0])
        self.betas = betas
        self.eps = eps
        self._m, self._v, self._t = {}, {}, 0

    def step(self):
        self._t += 1
        b1, b2 = self.betas
        c1, c2 = 1.0 - b1 ** self._t, 1.0 - b2 ** self._t
        for g in self.groups:
            lr = g["lr"]
            for p in g["params"]:
                if p.grad is None:
                    continue
                grad = p.grad.astype(np.float64)
                m = b1 * self._m.get(id(p), 0.0) + (1 - b1) * grad
                v = b2 * self._v.get(id(p), 0.0) + (1 - b2) * grad * grad
                self._m[id(p)], self._v[id(p)] = m, v
                p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)
