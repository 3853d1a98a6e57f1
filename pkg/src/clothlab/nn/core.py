"""Minimal reverse-mode differentiation on float64 numpy buffers.

A Tape records one entry per primitive operation in execution order (which is
a topological order of the forward graph); backward replays the records once
in reverse. Ops run without recording when no tape is active, which is the
inference fast path.
"""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError, NumericError

_ACTIVE_TAPE = None


class Tensor:
    __slots__ = ("data", "grad", "requires")

    def __init__(self, data, requires: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires = requires

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """Same values, no gradient flow into the producing subgraph."""
        return Tensor(self.data, requires=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires={self.requires})"


class Tape:
    """Ordered records of (output, backward closure); reverse replay of the
    records propagates gradients, visiting each record exactly once."""

    def __init__(self):
        self.records = []

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("a tape is already active; tapes do not nest")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def backward(self, loss: Tensor):
        if loss.data.size != 1:
            raise DimensionError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        loss.grad = np.ones_like(loss.data)
        for out, fn in reversed(self.records):
            if out.grad is not None:
                fn(out.grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out: Tensor, inputs, backward_fn):
    if _ACTIVE_TAPE is not None and any(t.requires for t in inputs):
        out.requires = True
        _ACTIVE_TAPE.records.append((out, backward_fn))
    return out


def _acc(t: Tensor, g):
    if not t.requires:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _sum_to(g: np.ndarray, shape) -> np.ndarray:
    # collapse broadcast dimensions of a gradient back to the input shape
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    if g.shape != tuple(shape):
        raise DimensionError(f"cannot reduce grad {g.shape} to {tuple(shape)}")
    return g


# ---------------------------------------------------------------- arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data)

    def back(g):
        _acc(a, _sum_to(g, a.data.shape))
        _acc(b, _sum_to(g, b.data.shape))

    return _record(out, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data)

    def back(g):
        _acc(a, _sum_to(g, a.data.shape))
        _acc(b, _sum_to(-g, b.data.shape))

    return _record(out, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data)

    def back(g):
        _acc(a, _sum_to(g * b.data, a.data.shape))
        _acc(b, _sum_to(g * a.data, b.data.shape))

    return _record(out, (a, b), back)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data / b.data)

    def back(g):
        _acc(a, _sum_to(g / b.data, a.data.shape))
        _acc(b, _sum_to(-g * a.data / (b.data ** 2), b.data.shape))

    return _record(out, (a, b), back)


def scale(a, s: float) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data * s)

    def back(g):
        _acc(a, g * s)

    return _record(out, (a,), back)


def shift(a, s: float) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data + s)

    def back(g):
        _acc(a, g)

    return _record(out, (a,), back)


def square(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data ** 2)

    def back(g):
        _acc(a, g * 2.0 * a.data)

    return _record(out, (a,), back)


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise NumericError("log of a non-positive value")
    out = Tensor(np.log(a.data))

    def back(g):
        _acc(a, g / a.data)

    return _record(out, (a,), back)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.exp(a.data))

    def back(g):
        _acc(a, g * out.data)

    return _record(out, (a,), back)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape[-1] != b.data.shape[0]:
        raise DimensionError(f"matmul mismatch: {a.data.shape} @ {b.data.shape}")
    out = Tensor(a.data @ b.data)

    def back(g):
        if a.data.ndim == 1:
            _acc(a, g @ b.data.T)
            _acc(b, np.outer(a.data, g))
        else:
            _acc(a, g @ b.data.T)
            _acc(b, a.data.T @ g)

    return _record(out, (a, b), back)


def concat(parts, axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        for p, gp in zip(parts, np.split(g, splits, axis=axis)):
            _acc(p, gp)

    return _record(out, tuple(parts), back)


def total(a) -> Tensor:
    """Sum of all elements as a scalar."""
    a = as_tensor(a)
    out = Tensor(a.data.sum())

    def back(g):
        _acc(a, np.broadcast_to(g, a.data.shape).copy() if np.ndim(g) else np.full_like(a.data, g))

    return _record(out, (a,), back)


def mean_rows(a) -> Tensor:
    """Mean over the leading (batch) axis."""
    a = as_tensor(a)
    n = a.data.shape[0]
    out = Tensor(a.data.mean(axis=0))

    def back(g):
        _acc(a, np.broadcast_to(g / n, a.data.shape).copy())

    return _record(out, (a,), back)


def sum_last(a) -> Tensor:
    """Sum over the trailing axis (per-row reductions for batched vectors)."""
    a = as_tensor(a)
    out = Tensor(a.data.sum(axis=-1))

    def back(g):
        _acc(a, np.repeat(np.expand_dims(g, -1), a.data.shape[-1], axis=-1))

    return _record(out, (a,), back)


# ---------------------------------------------------------------- activations

def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))     # overflow-safe


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.tanh(a.data))

    def back(g):
        _acc(a, g * (1.0 - out.data ** 2))

    return _record(out, (a,), back)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(_sigmoid(a.data))

    def back(g):
        _acc(a, g * out.data * (1.0 - out.data))

    return _record(out, (a,), back)


def softplus(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.logaddexp(0.0, a.data))

    def back(g):
        _acc(a, g * _sigmoid(a.data))

    return _record(out, (a,), back)


def elu(a) -> Tensor:
    a = as_tensor(a)
    neg = np.expm1(np.minimum(a.data, 0.0))
    out = Tensor(np.where(a.data > 0, a.data, neg))

    def back(g):
        _acc(a, g * np.where(a.data > 0, 1.0, neg + 1.0))

    return _record(out, (a,), back)


ACTIVATIONS = {"tanh": tanh, "elu": elu, "softplus": softplus, "sigmoid": sigmoid}


def activation(a, kind: str) -> Tensor:
    try:
        return ACTIVATIONS[kind](a)
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None


# ---------------------------------------------------------------- likelihoods

def bernoulli_nll(logits, target_bits, row_weights=None) -> Tensor:
    """Summed negative log-likelihood of binary targets under logits.

    Uses the max(l,0) - l*t + log(1+exp(-|l|)) form so saturated logits stay
    finite; the gradient is sigmoid(l) - t. ``row_weights`` weights each
    leading-axis row (validity masking for ragged batches).
    """
    logits = as_tensor(logits)
    t = np.asarray(target_bits, dtype=np.float64)
    if t.shape != logits.data.shape:
        raise DimensionError(f"target shape {t.shape} vs logits {logits.data.shape}")
    l = logits.data
    per = np.maximum(l, 0.0) - l * t + np.log1p(np.exp(-np.abs(l)))
    if row_weights is None:
        w = None
        out = Tensor(per.sum())
    else:
        w = np.asarray(row_weights, dtype=np.float64).reshape(-1, *([1] * (l.ndim - 1)))
        out = Tensor((per * w).sum())

    def back(g):
        grad = _sigmoid(l) - t
        if w is not None:
            grad = grad * w
        _acc(logits, g * grad)

    return _record(out, (logits,), back)


LOG_TWO_PI = float(np.log(2.0 * np.pi))


def gaussian_nll(mean, std, target, row_weights=None) -> Tensor:
    """Summed negative log-likelihood of targets under a diagonal Gaussian."""
    mean, std = as_tensor(mean), as_tensor(std)
    if np.any(std.data <= 0):
        raise NumericError("gaussian_nll requires positive std")
    t = Tensor(np.asarray(target, dtype=np.float64))
    z = div(sub(t, mean), std)
    per_elem = add(add(scale(square(z), 0.5), log(std)), 0.5 * LOG_TWO_PI)
    if row_weights is not None:
        w = np.asarray(row_weights, dtype=np.float64).reshape(-1, *([1] * (per_elem.data.ndim - 1)))
        per_elem = mul(per_elem, Tensor(np.broadcast_to(w, per_elem.data.shape).copy()))
    return total(per_elem)


def kl_diag_gaussians(mean_q, std_q, mean_p, std_p) -> Tensor:
    """Closed-form KL(q || p) between diagonal Gaussians, summed over dims."""
    mean_q, std_q = as_tensor(mean_q), as_tensor(std_q)
    mean_p, std_p = as_tensor(mean_p), as_tensor(std_p)
    if np.any(std_q.data <= 0) or np.any(std_p.data <= 0):
        raise NumericError("KL requires positive stds")
    var_ratio = square(div(std_q, std_p))
    mean_term = square(div(sub(mean_q, mean_p), std_p))
    per_dim = scale(add(add(var_ratio, mean_term), -1.0), 0.5)
    return total(sub(per_dim, log(div(std_q, std_p))))


def kl_diag_gaussians_per_row(mean_q, std_q, mean_p, std_p) -> Tensor:
    """Row-wise KL for batched (B, S) distribution parameters."""
    mean_q, std_q = as_tensor(mean_q), as_tensor(std_q)
    mean_p, std_p = as_tensor(mean_p), as_tensor(std_p)
    if np.any(std_q.data <= 0) or np.any(std_p.data <= 0):
        raise NumericError("KL requires positive stds")
    var_ratio = square(div(std_q, std_p))
    mean_term = square(div(sub(mean_q, mean_p), std_p))
    per_dim = sub(scale(add(add(var_ratio, mean_term), -1.0), 0.5), log(div(std_q, std_p)))
    return sum_last(per_dim)


def maximum_scalar(a, floor: float) -> Tensor:
    """Elementwise max(a, floor); the hinge used for free-nats clipping."""
    a = as_tensor(a)
    out = Tensor(np.maximum(a.data, floor))

    def back(g):
        _acc(a, g * (a.data > floor))

    return _record(out, (a,), back)
