"""Sequence losses: filtered reconstruction + KL objective, and latent
overshooting against future posteriors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionError, TrainingDivergenceError
from ..nn import core
from .model import GoalConditionedRSSM, LatentState, RSSMConfig


@dataclass
class TrajectoryBatch:
    """Aligned (B, T) arrays. obs[b, t] is the mask produced by actions[b, t]
    (the first action of an episode is the zero no-op)."""

    obs: np.ndarray        # (B, T, R*R) float 0/1
    actions: np.ndarray    # (B, T, 4)
    rewards: np.ndarray    # (B, T)
    goal: np.ndarray       # (B, R*R)
    validity: np.ndarray   # (B, T) float 0/1

    def __post_init__(self):
        b, t = self.rewards.shape
        if self.obs.shape[:2] != (b, t) or self.actions.shape != (b, t, 4):
            raise DimensionError(
                f"batch misaligned: obs {self.obs.shape}, actions {self.actions.shape}, "
                f"rewards {self.rewards.shape}"
            )
        if self.goal.shape != (b, self.obs.shape[2]):
            raise DimensionError(f"goal shape {self.goal.shape} vs obs {self.obs.shape}")
        if self.validity.shape != (b, t):
            raise DimensionError(f"validity shape {self.validity.shape}")
        if not np.isfinite(self.rewards).all():
            raise ValueError("non-finite rewards in batch")

    @property
    def batch_size(self) -> int:
        return self.rewards.shape[0]

    @property
    def steps(self) -> int:
        return self.rewards.shape[1]


@dataclass
class FilterCache:
    """Intermediates of one filtering pass, reused by the overshooting term."""

    posteriors: list          # LatentState per step
    goal_embeds: list         # Tensor per step
    kl_values: np.ndarray     # (T, B) raw KL of the main objective


def _filter(model: GoalConditionedRSSM, batch: TrajectoryBatch, rng, goal_inputs):
    """Run the posterior filter, accumulating reconstruction and KL terms."""
    cfg = model.config
    b, t_steps = batch.batch_size, batch.steps

    if goal_inputs is None:
        shared = model.encode(batch.goal)
        goal_embeds = [shared] * t_steps
    else:
        if len(goal_inputs) != t_steps:
            raise DimensionError(f"goal_inputs leading dim {len(goal_inputs)} != T {t_steps}")
        goal_embeds = [model.encode(goal_inputs[t]) for t in range(t_steps)]

    state = model.initial_state(b)
    nll_obs_terms, nll_rew_terms, kl_terms = [], [], []
    kl_raw = np.zeros((t_steps, b))
    posteriors = []
    for t in range(t_steps):
        h = model.recurrent_step(state, batch.actions[:, t])
        e_x = model.encode(batch.obs[:, t])
        noise = rng.standard_normal((b, cfg.stochastic_dim)) if rng is not None else None
        post = model.posterior(h, e_x, goal_embeds[t], noise=noise)
        prior = model.prior(h, goal_embeds[t])  # only the distribution is used
        valid = batch.validity[:, t]

        logits = model.decode_obs(post)
        nll_obs_terms.append(core.bernoulli_nll(logits, batch.obs[:, t], row_weights=valid))
        r_mean, r_std = model.decode_reward(post)
        nll_rew_terms.append(core.gaussian_nll(
            r_mean, r_std, batch.rewards[:, t][:, None], row_weights=valid))

        kl_rows = core.kl_diag_gaussians_per_row(post.mean, post.std, prior.mean, prior.std)
        kl_raw[t] = kl_rows.data
        hinged = core.maximum_scalar(core.shift(kl_rows, -cfg.free_nats), 0.0)
        kl_terms.append(core.total(core.mul(hinged, core.as_tensor(valid))))

        posteriors.append(post)
        state = post

    def _accumulate(terms):
        acc = terms[0]
        for term in terms[1:]:
            acc = core.add(acc, term)
        return acc

    nll_obs = _accumulate(nll_obs_terms)
    nll_rew = _accumulate(nll_rew_terms)
    kl = _accumulate(kl_terms)
    cache = FilterCache(posteriors, goal_embeds, kl_raw)
    return nll_obs, nll_rew, kl, cache


def elbo_loss(model: GoalConditionedRSSM, batch: TrajectoryBatch,
              rng: np.random.Generator | None = None,
              goal_inputs: np.ndarray | None = None):
    """Reconstruction NLLs plus free-nats-hinged KL, summed over time and
    averaged over the batch. Goal gradients flow through every term.

    Returns (scalar loss Tensor, parts dict, FilterCache).
    """
    cfg = model.config
    nll_obs, nll_rew, kl, cache = _filter(model, batch, rng, goal_inputs)
    inv_b = 1.0 / batch.batch_size
    loss = core.scale(
        core.add(core.add(nll_obs, nll_rew), core.scale(kl, cfg.kl_scale)), inv_b)
    if not np.isfinite(loss.data):
        raise TrainingDivergenceError(
            f"non-finite loss: nll_obs={nll_obs.data}, nll_rew={nll_rew.data}, kl={kl.data}"
        )
    parts = {
        "nll_obs": float(nll_obs.data) * inv_b,
        "nll_reward": float(nll_rew.data) * inv_b,
        "kl": float(cache.kl_values.sum(axis=0).mean()),
        "kl_hinged": float(kl.data) * inv_b,
    }
    return loss, parts, cache


def overshoot_loss(model: GoalConditionedRSSM, batch: TrajectoryBatch,
                   cache: FilterCache | None = None,
                   rng: np.random.Generator | None = None):
    """Latent overshooting: roll the transition predictor k steps open loop
    from each detached posterior and penalize its KL to the (detached)
    posterior reached at t+k. Unlike the main objective this term is not
    hinged by free nats, so the multi-step prior always receives gradient.

    Gradient flow through the goal embedding is blocked inside this term (the
    prior chain consumes a detached copy and the posterior targets are
    detached), so goal gradients from this loss are exactly zero. Returns
    (scalar loss Tensor, per-depth KL table).
    """
    cfg = model.config
    if cfg.overshoot_horizon < 1:
        zero = core.as_tensor(np.zeros(()))
        return zero, {}
    if cache is None:
        _, _, _, cache = _filter(model, batch, rng, None)

    b, t_steps = batch.batch_size, batch.steps
    goal_detached = [e.detach() for e in cache.goal_embeds]
    depth_kls = {k: [] for k in range(1, cfg.overshoot_horizon + 1)}
    terms = []
    for t in range(t_steps - 1):
        post = cache.posteriors[t]
        state = LatentState(post.h.detach(), post.z.detach(),
                            post.mean.detach(), post.std.detach(), "posterior")
        for k in range(1, cfg.overshoot_horizon + 1):
            step = t + k
            if step >= t_steps:
                break
            h = model.recurrent_step(state, batch.actions[:, step])
            prior = model.prior(h, goal_detached[step], noise=None)  # mean propagation
            target = cache.posteriors[step]
            kl_rows = core.kl_diag_gaussians_per_row(
                target.mean.detach(), target.std.detach(), prior.mean, prior.std)
            depth_kls[k].append(kl_rows.data.copy())
            terms.append(core.total(core.mul(kl_rows, core.as_tensor(batch.validity[:, step]))))
            state = prior

    if not terms:
        return core.as_tensor(np.zeros(())), {}
    acc = terms[0]
    for term in terms[1:]:
        acc = core.add(acc, term)
    loss = core.scale(acc, cfg.overshoot_scale / (batch.batch_size * cfg.overshoot_horizon))
    table = {k: np.concatenate(v).mean() for k, v in depth_kls.items() if v}
    return loss, table
