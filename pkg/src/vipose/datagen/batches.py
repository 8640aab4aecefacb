"""Mixing real and synthetic pairs into training batches."""
from __future__ import annotations

import numpy as np


def batch_plan(n_real: int, batch: int = 64, real_fraction: float = 1 / 8, seed: int = 0, epoch: int = 0):
    """Index-level plan for one epoch: list of (real indices, number of synthetic slots).

    Real indices are a fresh permutation per epoch, so every real pair is
    visited at least once; a short final chunk is topped up from the start of
    the permutation so every batch has the same real count. With
    ``real_fraction`` 1 the batches are all real.
    """
    if n_real <= 0:
        raise ValueError("need at least one real pair")
    if not 0.0 < real_fraction <= 1.0:
        raise ValueError("real_fraction must lie in (0, 1]")
    n_per = max(1, int(round(batch * real_fraction)))
    n_syn = batch - n_per
    order = np.random.default_rng([seed, epoch]).permutation(n_real)
    n_per = min(n_per, n_real) if n_syn == 0 else n_per
    plan = []
    for i in range(0, n_real, n_per):
        idx = order[i:i + n_per]
        if len(idx) < n_per:
            idx = np.concatenate([idx, np.resize(order, n_per - len(idx))])
        plan.append((idx, n_syn))
    return plan


def batch_iterator(real_pairs, synthetic_source=None, batch: int = 64, real_fraction: float = 1 / 8,
                   seed: int = 0, epoch: int = 0):
    """Yield lists of TrainingPair.

    ``real_pairs`` is any indexable sequence; ``synthetic_source`` is called
    with a Generator and returns one synthetic pair. Without a source every
    batch is all real (second training step).
    """
    if synthetic_source is None:
        real_fraction = 1.0
    rng = np.random.default_rng([seed, epoch, 1])
    for idx, n_syn in batch_plan(len(real_pairs), batch, real_fraction, seed, epoch):
        out = [real_pairs[int(i)] for i in idx]
        out += [synthetic_source(rng) for _ in range(n_syn)]
        yield out
