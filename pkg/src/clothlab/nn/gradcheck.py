"""Central-difference verification of every analytic gradient path."""

from __future__ import annotations

import numpy as np

from . import core, layers
from .core import Tape
from .layers import ParamStore
from .optim import adam_update  # noqa: F401  (re-exported for the audit CLI)


def finite_diff_check(fn, store: ParamStore, epsilon: float = 1e-5) -> float:
    """Worst relative discrepancy between analytic and central-difference
    gradients of the scalar ``fn()`` over every parameter coordinate.

    ``fn`` must be deterministic (freeze any sampling noise before calling).
    """
    store.zero_grads()
    with Tape() as tape:
        loss = fn()
        tape.backward(loss)
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for k, p in store.params.items()}

    worst = 0.0
    for name, p in store.params.items():
        flat = p.data.reshape(-1)
        an = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = fn().item()
            flat[i] = orig - epsilon
            down = fn().item()
            flat[i] = orig
            fd = (up - down) / (2.0 * epsilon)
            err = abs(fd - an[i]) / max(abs(fd), abs(an[i]), 1e-6)
            if err > worst:
                worst = err
    return worst


def _random_mix(rng, *shapes):
    return [rng.normal(size=s) for s in shapes]


def run_gradient_audit(seed: int = 0) -> dict:
    """Randomized compositions covering affine stacks, the recurrent cell,
    decoder-style heads and the denoiser objective. Returns per-case worst
    relative errors keyed by case name."""
    rng = np.random.default_rng(seed)
    results = {}

    # affine chains through each activation
    for kind in ("tanh", "elu", "softplus", "sigmoid"):
        store = ParamStore(seed=rng.integers(1 << 31))
        x = rng.normal(size=(3, 5))
        target = rng.normal(size=(3, 2))

        def loss_fn(store=store, x=x, target=target, kind=kind):
            h = core.activation(layers.affine(store, x, "l1", 7), kind)
            h = core.activation(layers.affine(store, h, "l2", 4), kind)
            y = layers.affine(store, h, "l3", 2)
            return core.total(core.square(core.sub(y, target)))

        loss_fn()  # materialize params
        results[f"affine_{kind}"] = finite_diff_check(loss_fn, store)

    # two chained recurrent updates
    store = ParamStore(seed=rng.integers(1 << 31))
    h0 = rng.normal(size=(2, 6))
    x_seq = rng.normal(size=(2, 2, 4))

    def gru_loss(store=store, h0=h0, x_seq=x_seq):
        h = core.as_tensor(h0)
        for t in range(x_seq.shape[1]):
            h = layers.gru_cell(store, h, x_seq[:, t], "cell")
        return core.total(core.square(h))

    gru_loss()
    results["gru_chain"] = finite_diff_check(gru_loss, store)

    # gaussian head + KL + both likelihoods (decoder-style composite)
    store = ParamStore(seed=rng.integers(1 << 31))
    x = rng.normal(size=(3, 6))
    bits = (rng.random(size=(3, 4)) < 0.5).astype(float)
    reward = rng.normal(size=(3, 1))
    noise = rng.normal(size=(3, 3))

    def head_loss(store=store, x=x, bits=bits, reward=reward, noise=noise):
        mq, sq = layers.gaussian_head(store, x, "post", 3, min_std=0.1)
        mp, sp = layers.gaussian_head(store, x, "prior", 3, min_std=0.1)
        z = core.add(mq, core.mul(sq, noise))
        logits = layers.affine(store, z, "dec", 4)
        rm, rs = layers.gaussian_head(store, z, "rew", 1, min_std=0.1)
        return core.add(
            core.add(core.bernoulli_nll(logits, bits), core.gaussian_nll(rm, rs, reward)),
            core.kl_diag_gaussians(mq, sq, mp, sp),
        )

    head_loss()
    results["decoder_heads"] = finite_diff_check(head_loss, store)

    # denoiser objective: predict injected noise from (noisy action, t-embed, context)
    store = ParamStore(seed=rng.integers(1 << 31))
    noisy = rng.normal(size=(3, 4))
    temb = rng.normal(size=(3, 6))
    ctx = rng.normal(size=(3, 5))
    eps_target = rng.normal(size=(3, 4))

    def denoiser_loss(store=store, noisy=noisy, temb=temb, ctx=ctx, eps_target=eps_target):
        h = core.concat([core.as_tensor(noisy), core.as_tensor(temb), core.as_tensor(ctx)])
        for i, width in enumerate((8, 8, 8)):
            h = core.elu(layers.affine(store, h, f"d{i}", width))
        pred = layers.affine(store, h, "out", 4)
        return core.total(core.square(core.sub(pred, eps_target)))

    denoiser_loss()
    results["denoiser"] = finite_diff_check(denoiser_loss, store)
    return results
