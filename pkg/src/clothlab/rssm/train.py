"""Training loop: chunk sampling from trajectory records, augmentation,
combined objective, Adam updates and line-delimited logging."""

from __future__ import annotations

import os
import time

import numpy as np

from ..errors import InsufficientDataError
from ..nn.core import Tape
from ..nn.optim import adam_update, clip_grad_norm
from .augment import augment_goal, augment_trajectory
from .loss import TrajectoryBatch, elbo_loss, overshoot_loss
from .model import GoalConditionedRSSM, RSSMConfig


def sample_chunk_batch(records: list, config: RSSMConfig, rng: np.random.Generator,
                       augment: bool = True) -> TrajectoryBatch:
    """Draw B sequence chunks of length L, one trajectory transform each, plus
    step-wise goal augmentation. Records need .masks (S, R, R) uint8,
    .actions (S, 4), .rewards (S,), .goal_mask (R, R)."""
    if not records:
        raise InsufficientDataError("empty dataset")
    b, length = config.batch_size, config.sequence_length
    res = config.obs_resolution
    obs = np.zeros((b, length, res * res))
    actions = np.zeros((b, length, 4))
    rewards = np.zeros((b, length))
    goals = np.zeros((b, res * res))
    goal_inputs = np.zeros((length, b, res * res))
    validity = np.zeros((b, length))

    for i in range(b):
        rec = records[int(rng.integers(len(records)))]
        steps = len(rec.rewards)
        take = min(length, steps)
        start = int(rng.integers(steps - take + 1))
        masks = np.asarray(rec.masks[start : start + take], dtype=np.uint8)
        acts = np.asarray(rec.actions[start : start + take], dtype=np.float64)
        rews = np.asarray(rec.rewards[start : start + take], dtype=np.float64)
        goal = np.asarray(rec.goal_mask, dtype=np.uint8)
        if augment:
            masks, acts, goal = augment_trajectory(masks, acts, goal, rng)
        obs[i, :take] = masks.reshape(take, -1)
        actions[i, :take] = acts
        rewards[i, :take] = rews
        goals[i] = goal.reshape(-1)
        validity[i, :take] = 1.0
        for t in range(length):
            g = augment_goal(goal, rng, config.goal_translate_std) if augment else goal
            goal_inputs[t, i] = g.reshape(-1)

    batch = TrajectoryBatch(obs, actions, rewards, goals, validity)
    return batch, goal_inputs


def train_step(model: GoalConditionedRSSM, batch: TrajectoryBatch,
               goal_inputs, rng: np.random.Generator) -> dict:
    cfg = model.config
    model.store.zero_grads()
    with Tape() as tape:
        loss, parts, cache = elbo_loss(model, batch, rng=rng, goal_inputs=goal_inputs)
        if cfg.overshoot_horizon >= 1:
            extra, _ = overshoot_loss(model, batch, cache=cache)
            parts["overshoot"] = float(extra.data)
            from ..nn import core

            loss = core.add(loss, extra)
        else:
            parts["overshoot"] = 0.0
        tape.backward(loss)
    grads = clip_grad_norm(model.store.grads(), cfg.grad_clip)
    adam_update(model.store, grads, cfg.learning_rate)
    parts["loss"] = float(loss.data)
    return parts


def train(records: list, config: RSSMConfig, rng: np.random.Generator,
          steps: int = 2000, out_dir: str | None = None,
          checkpoint_every: int = 500, log_every: int = 50,
          model: GoalConditionedRSSM | None = None,
          progress: bool = False):
    """Fit a model on trajectory records; returns (model, log list)."""
    if not records:
        raise InsufficientDataError("training requires a nonempty dataset")
    if model is None:
        model = GoalConditionedRSSM(config)
    log = []
    log_fh = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        log_fh = open(os.path.join(out_dir, "train_log.txt"), "w", encoding="utf-8")
    try:
        for step in range(1, steps + 1):
            t0 = time.perf_counter()
            batch, goal_inputs = sample_chunk_batch(records, config, rng)
            parts = train_step(model, batch, goal_inputs, rng)
            parts["step"] = step
            parts["wall_ms"] = (time.perf_counter() - t0) * 1000.0
            if step % log_every == 0 or step == steps or step == 1:
                log.append(parts)
                if log_fh:
                    log_fh.write(
                        "step=%d nll_obs=%.4f nll_reward=%.4f kl=%.4f overshoot=%.4f wall_ms=%.1f\n"
                        % (step, parts["nll_obs"], parts["nll_reward"], parts["kl"],
                           parts["overshoot"], parts["wall_ms"])
                    )
                    log_fh.flush()
                if progress:
                    print("  step %5d  loss %10.2f  nll_obs %9.2f  kl %7.3f" % (
                        step, parts["loss"], parts["nll_obs"], parts["kl"]))
            if out_dir and (step % checkpoint_every == 0 or step == steps):
                model.save(os.path.join(out_dir, "model.lgnn"))
    finally:
        if log_fh:
            log_fh.close()
    return model, log
