"""Latent-space model-predictive control with the cross-entropy method.

Candidate pick points are projected onto the allowed pick mask (cloth within
the workspace) and places onto the allowed place mask, so every emitted
action satisfies the constraint exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NoClothError
from .masks import MaskImage, pixel_to_normalized
from .rssm.model import GoalConditionedRSSM, LatentState


@dataclass
class PlannerConfig:
    horizon: int = 2
    candidates: int = 300            # J
    iterations: int = 5              # I
    elite_fraction: float = 0.1
    init_std: float = 0.5
    min_plan_std: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.elite_fraction <= 0.5:
            raise ValueError("elite_fraction must lie in (0, 0.5]")
        if self.candidates < 10 or self.horizon < 1:
            raise ValueError("need at least 10 candidates and horizon >= 1")


@dataclass
class ActionConstraint:
    pick_mask: MaskImage
    place_mask: MaskImage

    def __post_init__(self):
        if self.pick_mask.bits.shape != self.place_mask.bits.shape:
            raise DimensionError("pick/place mask shapes differ")
        if self.pick_mask.is_empty():
            raise NoClothError("no allowed pick pixel inside the workspace")


@dataclass
class PlanDiagnostics:
    candidates: np.ndarray      # (J, 4) first-step actions of the final iteration
    returns: np.ndarray         # (J,)
    iter_means: np.ndarray      # (I, 4) first-step mean per iteration


def _allowed_coords(mask: MaskImage) -> np.ndarray:
    """Normalized (x, y) centers of allowed pixels in row-major order (the
    row-major order is the tie-breaking order for projections)."""
    rows, cols = np.nonzero(mask.bits)
    return pixel_to_normalized(np.stack([rows, cols], axis=1), mask.resolution)


def _project(points: np.ndarray, allowed_xy: np.ndarray) -> np.ndarray:
    """Nearest allowed pixel center per point; ties resolve to the earliest
    (row-major) allowed pixel because argmin picks the first minimum."""
    d2 = ((points[:, None, :] - allowed_xy[None, :, :]) ** 2).sum(axis=2)
    return allowed_xy[np.argmin(d2, axis=1)]


def sample_candidates(mean: np.ndarray, std: np.ndarray, constraint: ActionConstraint,
                      count: int, rng: np.random.Generator) -> np.ndarray:
    """Draw count action sequences from the per-step Gaussian and project them
    onto the constraint. mean/std: (H, 4). Returns (J, H, 4)."""
    horizon = mean.shape[0]
    raw = mean[None] + std[None] * rng.standard_normal((count, horizon, 4))
    raw = np.clip(raw, -1.0, 1.0)
    pick_xy = _allowed_coords(constraint.pick_mask)
    place_xy = _allowed_coords(constraint.place_mask)
    if len(place_xy) == 0:
        raise NoClothError("empty place mask")
    flat = raw.reshape(-1, 4)
    flat[:, 0:2] = _project(flat[:, 0:2], pick_xy)
    flat[:, 2:4] = _project(flat[:, 2:4], place_xy)
    return flat.reshape(count, horizon, 4)


def evaluate_candidates(model: GoalConditionedRSSM, state: LatentState,
                        goal_embedding, candidates: np.ndarray) -> np.ndarray:
    """Predicted return of each candidate sequence: open-loop prior rollout
    from the filtered state using distribution means, summing decoded reward
    means. Deterministic."""
    j, horizon, _ = candidates.shape
    h = np.repeat(state.h.data, j, axis=0)
    z = np.repeat(state.z.data, j, axis=0)
    goal = np.repeat(goal_embedding.data if hasattr(goal_embedding, "data")
                     else np.asarray(goal_embedding), j, axis=0)
    from .nn import core

    current = LatentState(core.as_tensor(h), core.as_tensor(z),
                          core.as_tensor(z), core.as_tensor(np.ones_like(z)), "posterior")
    returns = np.zeros(j)
    for k in range(horizon):
        h_t = model.recurrent_step(current, candidates[:, k])
        current = model.prior(h_t, core.as_tensor(goal))   # mean propagation
        r_mean, _ = model.decode_reward(current)
        returns += r_mean.data[:, 0]
    return returns


def cem_iterate(mean: np.ndarray, std: np.ndarray, candidates: np.ndarray,
                returns: np.ndarray, elite_fraction: float,
                min_plan_std: float) -> tuple[np.ndarray, np.ndarray]:
    """Refit the per-step Gaussian to the top elite candidates (ties keep the
    lower candidate index via stable sorting)."""
    j = len(returns)
    n_elite = max(int(np.ceil(elite_fraction * j)), 1)
    order = np.argsort(-returns, kind="stable")
    elites = candidates[order[:n_elite]]
    new_mean = elites.mean(axis=0)
    new_std = np.maximum(elites.std(axis=0), min_plan_std)
    return new_mean, new_std


def plan(model: GoalConditionedRSSM, obs_history, action_history, goal_mask,
         constraint: ActionConstraint, config: PlannerConfig,
         collect_diagnostics: bool = False):
    """Choose the next action: filter the posterior over the observation
    history, refine the action Gaussian with CEM, return the first action of
    the final mean projected onto the constraint.

    obs_history: (T, R, R) or (T, R*R) masks; action_history: (T, 4) with
    actions[t] leading into obs[t] (zeros for the first entry).
    """
    obs = np.asarray(obs_history, dtype=np.float64)
    if obs.ndim == 3:
        obs = obs.reshape(len(obs), -1)
    acts = np.asarray(action_history, dtype=np.float64)
    if len(obs) == 0:
        raise DimensionError("plan needs at least one observation")

    goal_flat = np.asarray(goal_mask, dtype=np.float64).reshape(1, -1)
    goal_embedding = model.encode(goal_flat)
    state = model.filter_posterior(obs, acts, goal_flat)

    rng = np.random.default_rng(config.seed)
    mean = np.zeros((config.horizon, 4))
    std = np.full((config.horizon, 4), config.init_std)
    iter_means = []
    candidates = returns = None
    for _ in range(config.iterations):
        candidates = sample_candidates(mean, std, constraint, config.candidates, rng)
        returns = evaluate_candidates(model, state, goal_embedding, candidates)
        mean, std = cem_iterate(mean, std, candidates, returns,
                                config.elite_fraction, config.min_plan_std)
        iter_means.append(mean[0].copy())

    final = mean[0:1].copy()
    pick_xy = _allowed_coords(constraint.pick_mask)
    place_xy = _allowed_coords(constraint.place_mask)
    final[:, 0:2] = _project(final[:, 0:2], pick_xy)
    final[:, 2:4] = _project(final[:, 2:4], place_xy)

    from .sim import PnPAction

    action = PnPAction.from_array(final[0])
    if collect_diagnostics:
        diag = PlanDiagnostics(candidates[:, 0, :].copy(), returns.copy(),
                               np.asarray(iter_means))
        return action, diag
    return action
