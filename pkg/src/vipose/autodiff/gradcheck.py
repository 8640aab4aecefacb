from __future__ import annotations

import numpy as np

from .tensor import Tensor, no_grad


def grad_check(op, inputs, eps: float = 1e-4, seed: int = 0, max_entries: int | None = None) -> float:
    """Largest relative error between reverse-mode and central-difference gradients.

    ``op`` maps the list of input tensors to an output tensor; it is reduced to
    a scalar with a fixed random projection. Inputs are promoted to float64.
    The error for each input is ||g_ad - g_fd|| / max(||g_ad||, ||g_fd||, 1e-12).
    ``max_entries`` limits the finite-difference probes per input to a random subset.
    """
    rng = np.random.default_rng(seed)
    tensors = [Tensor(np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64), requires_grad=True)
               for x in inputs]
    out = op(tensors)
    proj = rng.normal(size=out.shape)

    def scalar() -> float:
        with no_grad():
            return float((op(tensors).data * proj).sum())

    (out * Tensor(proj, dtype=np.float64)).sum().backward()
    worst = 0.0
    for t in tensors:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, max_entries, replace=False)
        numeric = np.zeros(len(idx))
        for k, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + eps
            up = scalar()
            flat[i] = orig - eps
            down = scalar()
            flat[i] = orig
            numeric[k] = (up - down) / (2 * eps)
        a = analytic.reshape(-1)[idx]
        err = np.linalg.norm(a - numeric) / max(np.linalg.norm(a), np.linalg.norm(numeric), 1e-12)
        worst = max(worst, float(err))
    return worst
