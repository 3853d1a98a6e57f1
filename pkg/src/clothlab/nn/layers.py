"""Parameter storage and the layer set used by the world model and policies."""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError
from . import core
from .core import Tensor


class ParamStore:
    """Named parameter map with Adam moment accumulators.

    Parameters are created lazily on first use with a deterministic init
    drawn from the store's own generator, so two stores built by the same
    code path with the same seed hold bit-identical values.
    """

    def __init__(self, seed: int = 0):
        self.params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0
        self._rng = np.random.default_rng(seed)

    def get(self, name: str, shape: tuple, init: str = "normal") -> Tensor:
        if name in self.params:
            p = self.params[name]
            if p.data.shape != tuple(shape):
                raise DimensionError(f"param {name}: stored {p.data.shape} vs requested {tuple(shape)}")
            return p
        if init == "zeros":
            data = np.zeros(shape)
        elif init == "normal":
            fan_in = shape[0] if len(shape) > 1 else max(shape[0], 1)
            data = self._rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape)
        else:
            raise ValueError(f"unknown init {init!r}")
        p = Tensor(data, requires=True)
        self.params[name] = p
        self.m[name] = np.zeros(shape)
        self.v[name] = np.zeros(shape)
        return p

    def zero_grads(self):
        for p in self.params.values():
            p.grad = None

    def grads(self) -> dict:
        return {k: p.grad for k, p in self.params.items() if p.grad is not None}

    def state_dict(self) -> dict:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state_dict(self, state: dict):
        for k, v in state.items():
            arr = np.asarray(v, dtype=np.float64)
            if k in self.params:
                if self.params[k].data.shape != arr.shape:
                    raise DimensionError(f"param {k}: checkpoint {arr.shape} vs model {self.params[k].data.shape}")
                self.params[k].data = arr.copy()
            else:
                self.params[k] = Tensor(arr.copy(), requires=True)
                self.m[k] = np.zeros(arr.shape)
                self.v[k] = np.zeros(arr.shape)


def affine(store: ParamStore, x, name: str, out_dim: int) -> Tensor:
    x = core.as_tensor(x)
    in_dim = x.data.shape[-1]
    w = store.get(f"{name}.w", (in_dim, out_dim))
    b = store.get(f"{name}.b", (out_dim,), init="zeros")
    return core.add(core.matmul(x, w), b)


def gru_cell(store: ParamStore, h, x, name: str) -> Tensor:
    """Gated recurrent update of the hidden state h with input x.

    The update gate writes: with both gate biases pushed large and positive,
    h' approaches the candidate activation.
    """
    h = core.as_tensor(h)
    x = core.as_tensor(x)
    hidden = h.data.shape[-1]
    hx = core.concat([x, h])
    r = core.sigmoid(affine(store, hx, f"{name}.reset", hidden))
    u = core.sigmoid(affine(store, hx, f"{name}.update", hidden))
    cand = core.tanh(affine(store, core.concat([x, core.mul(r, h)]), f"{name}.cand", hidden))
    keep = core.shift(core.scale(u, -1.0), 1.0)      # 1 - u
    return core.add(core.mul(keep, h), core.mul(u, cand))


def gaussian_head(store: ParamStore, x, name: str, out_dim: int, min_std: float) -> tuple[Tensor, Tensor]:
    """Mean and std of a diagonal Gaussian; std = softplus(raw) + min_std.

    Mean and raw-std paths use disjoint weights so their gradients stay
    independent at the raw-parameter level.
    """
    if min_std <= 0:
        raise ValueError(f"min_std must be positive, got {min_std}")
    mean = affine(store, x, f"{name}.mean", out_dim)
    raw = affine(store, x, f"{name}.rawstd", out_dim)
    std = core.shift(core.softplus(raw), min_std)
    return mean, std
