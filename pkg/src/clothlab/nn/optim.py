"""Adam with bias correction over a ParamStore."""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError
from .layers import ParamStore


def adam_update(store: ParamStore, grads: dict, lr: float,
                betas: tuple = (0.9, 0.999), eps: float = 1e-8) -> ParamStore:
    b1, b2 = betas
    store.step += 1
    t = store.step
    for name, g in grads.items():
        if name not in store.params:
            raise DimensionError(f"gradient for unknown parameter {name!r}")
        p = store.params[name]
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.data.shape:
            raise DimensionError(f"param {name}: grad {g.shape} vs param {p.data.shape}")
        store.m[name] = b1 * store.m[name] + (1.0 - b1) * g
        store.v[name] = b2 * store.v[name] + (1.0 - b2) * g * g
        m_hat = store.m[name] / (1.0 - b1 ** t)
        v_hat = store.v[name] / (1.0 - b2 ** t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)
    return store


def clip_grad_norm(grads: dict, max_norm: float) -> dict:
    """Scale all gradients down so their global L2 norm is at most max_norm."""
    sq = sum(float((g ** 2).sum()) for g in grads.values())
    norm = np.sqrt(sq)
    if norm <= max_norm or norm == 0.0:
        return grads
    factor = max_norm / norm
    return {k: g * factor for k, g in grads.items()}
