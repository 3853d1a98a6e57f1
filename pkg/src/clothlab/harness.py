"""Evaluation protocol: policies, single episodes, and aggregated tables over
hard initial states at several horizons."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig
from .dataset import TrajectoryRecord, mask_biased_random
from .diffusion import DiffusionPolicy, sample_action
from .env import ClothEnv, StepResult
from .errors import DegenerateStartError
from .masks import MaskImage
from .metrics import EvalRecord, normalized_improvement, success
from .planner import ActionConstraint, PlannerConfig, plan
from .rssm.model import GoalConditionedRSSM
from .sim import PnPAction, Window


class Policy:
    """Per-episode action source. ``state`` is the simulator ground truth and
    is consumed only by the scripted oracle."""

    name = "policy"

    def begin_episode(self, goal_mask: MaskImage):
        pass

    def act(self, obs: MaskImage, state, env: ClothEnv, rng) -> PnPAction:
        raise NotImplementedError


class RandomPolicy(Policy):
    name = "random"

    def act(self, obs, state, env, rng):
        return mask_biased_random(obs, rng)


class ScriptedCornerPolicy(Policy):
    """Round-robin corner pulls toward slightly overshot flattened targets;
    reads vertex positions from the simulator (an oracle by design)."""

    name = "scripted"

    def __init__(self, overshoot: float = 1.15, settle_threshold: float = 0.025):
        self.overshoot = overshoot
        self.settle_threshold = settle_threshold
        self._cursor = 0

    def begin_episode(self, goal_mask):
        self._cursor = 0

    def act(self, obs, state, env, rng):
        template, window = env.template, env.window
        corners = template.corner_indices()
        center = np.asarray(window.center)
        targets = template.rest_positions[corners] + center
        displacement = np.linalg.norm(state.positions[corners][:, :2] - targets, axis=1)
        n = len(corners)
        for j in range(n):
            k = (self._cursor + j) % n
            if displacement[k] < self.settle_threshold:
                continue
            self._cursor = (k + 1) % n
            return self._pull(state, window, corners[k], center, targets[k])
        # all corners parked: nudge the highest vertex toward its own spot
        v = int(np.argmax(state.positions[:, 2]))
        target = template.rest_positions[v] + center
        return self._pull(state, window, v, center, target)

    def _pull(self, state, window, vertex, center, target):
        pick = window.world_to_normalized(state.positions[vertex, :2])
        place = window.world_to_normalized(center + self.overshoot * (target - center))
        return PnPAction(tuple(np.clip(pick, -1.0, 1.0)), tuple(np.clip(place, -1.0, 1.0)))


class DiffusionPolicyWrapper(Policy):
    name = "diffusion"

    def __init__(self, policy: DiffusionPolicy):
        self.policy = policy

    def act(self, obs, state, env, rng):
        return PnPAction.from_array(sample_action(self.policy, obs.bits, rng))


class PlannerPolicy(Policy):
    """Latent MPC: keeps the observation/action history of the episode and
    replans each step under the cloth (and optional workspace) constraint."""

    name = "planner"

    def __init__(self, model: GoalConditionedRSSM, config: PlannerConfig,
                 workspace_mask: MaskImage | None = None, history_limit: int = 8):
        self.model = model
        self.config = config
        self.workspace_mask = workspace_mask
        self.history_limit = history_limit
        self._obs = []
        self._acts = []
        self._goal = None

    def begin_episode(self, goal_mask):
        self._obs, self._acts = [], []
        self._goal = goal_mask

    def act(self, obs, state, env, rng):
        self._obs.append(obs.bits.reshape(-1).astype(np.float64))
        if len(self._acts) == 0:
            self._acts.append(np.zeros(4))
        pick_bits = obs.bits
        place_bits = np.ones_like(obs.bits)
        if self.workspace_mask is not None:
            pick_bits = pick_bits & self.workspace_mask.bits
            place_bits = place_bits & self.workspace_mask.bits
        constraint = ActionConstraint(
            MaskImage(pick_bits, obs.window_side, obs.window_center),
            MaskImage(place_bits, obs.window_side, obs.window_center))
        obs_hist = np.asarray(self._obs[-self.history_limit:])
        act_hist = np.asarray(self._acts[-self.history_limit:])
        action = plan(self.model, obs_hist, act_hist, self._goal.bits.reshape(-1),
                      constraint, self.config)
        self._acts.append(action.as_array())
        return action


def run_episode(policy: Policy, env: ClothEnv, horizon: int, seed: int,
                difficulty: float = 1.0):
    """Roll one evaluation episode; returns (EvalRecord, TrajectoryRecord)."""
    first = env.reset(seed, difficulty)
    policy.begin_episode(env.goal_mask)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, 0xAC710)))

    nc_series = [first.nc]
    iou_series = [first.iou]
    masks = [first.mask.bits.copy()]
    actions = [np.zeros(4)]
    rewards = [np.float32(first.reward)]
    miss = [1]
    obs = first.mask
    for _ in range(horizon):
        action = policy.act(obs, env.state, env, rng)
        result = env.step(action, rng)
        nc_series.append(result.nc)
        iou_series.append(result.iou)
        masks.append(result.mask.bits.copy())
        actions.append(action.as_array())
        rewards.append(np.float32(result.reward))
        miss.append(1 if result.miss else 0)
        obs = result.mask
    record = EvalRecord(nc_series, iou_series, horizon, nc_series[0])
    tag = policy.name if policy.name in ("random", "diffusion", "scripted", "planner") else "random"
    trajectory = TrajectoryRecord(
        np.asarray(masks, dtype=np.uint8), np.asarray(actions),
        np.asarray(rewards, dtype=np.float32).astype(np.float64),
        np.asarray(miss, dtype=np.uint8), env.goal_mask.bits.copy(),
        tag, env.garment, seed)
    return record, trajectory


@dataclass
class EvalRow:
    garment: str
    horizon: int
    nc_mean: float
    nc_std: float
    ni_mean: float
    ni_std: float
    iou_mean: float
    iou_std: float
    sr_90_80: int
    sr_90_0: int
    trials: int


@dataclass
class EvalTable:
    rows: list
    records: dict                      # garment -> list of EvalRecord

    def text(self) -> str:
        header = (f"{'garment':<10} {'steps':>5} {'NC%':>12} {'NI%':>14} "
                  f"{'MaxIoU%':>12} {'SR90/80':>8} {'SR90/0':>7}")
        lines = [header, "-" * len(header)]
        for r in self.rows:
            lines.append(
                f"{r.garment:<10} {r.horizon:>5} "
                f"{100 * r.nc_mean:>6.1f}±{100 * r.nc_std:<5.1f} "
                f"{100 * r.ni_mean:>7.1f}±{100 * r.ni_std:<6.1f} "
                f"{100 * r.iou_mean:>6.1f}±{100 * r.iou_std:<5.1f} "
                f"{r.sr_90_80:>5}/{r.trials:<3} {r.sr_90_0:>4}/{r.trials:<3}")
        return "\n".join(lines)

    def machine_lines(self) -> str:
        lines = []
        for r in self.rows:
            for metric, mean, std in (("nc", r.nc_mean, r.nc_std),
                                      ("ni", r.ni_mean, r.ni_std),
                                      ("max_iou", r.iou_mean, r.iou_std)):
                lines.append(f"{r.garment} {r.horizon} {metric} {mean:.6f} {std:.6f}")
            lines.append(f"{r.garment} {r.horizon} sr_90_80 {r.sr_90_80} {r.trials}")
            lines.append(f"{r.garment} {r.horizon} sr_90_0 {r.sr_90_0} {r.trials}")
        return "\n".join(lines) + "\n"


def _episode_worker(args):
    policy, cfg, garment, seed, horizon = args
    env = ClothEnv(garment, resolution=cfg.resolution, sim_params=cfg.sim,
                   window=cfg.window, reward_params=cfg.rewards, iou_params=cfg.iou)
    record, _ = run_episode(policy, env, horizon, seed, cfg.difficulty)
    return record


def thread_cap() -> int:
    value = os.environ.get("LAGAR_THREADS", "")
    if value.strip():
        return max(int(value), 1)
    return os.cpu_count() or 1


def evaluate(policy: Policy, cfg: ExperimentConfig, progress: bool = False) -> EvalTable:
    """Evaluation-seed episodes per garment at the longest horizon; shorter
    horizons reuse the same rollouts. Deterministic per configuration."""
    max_h = max(cfg.eval_horizons)
    jobs = [(policy, cfg, garment, seed, max_h)
            for garment in cfg.garments for seed in cfg.eval_seeds]
    cap = thread_cap()
    if cap > 1 and len(jobs) > 1:
        import multiprocessing as mp

        with mp.get_context("spawn").Pool(processes=min(cap, len(jobs))) as pool:
            results = pool.map(_episode_worker, jobs)
    else:
        results = []
        for i, job in enumerate(jobs):
            results.append(_episode_worker(job))
            if progress:
                print("  episode %d/%d done (final NC %.2f)"
                      % (i + 1, len(jobs), results[-1].nc_series[-1]))

    by_garment = {}
    for (policy_, cfg_, garment, seed, _), rec in zip(jobs, results):
        by_garment.setdefault(garment, []).append(rec)

    rows = []
    for garment in cfg.garments:
        records = by_garment[garment]
        for horizon in sorted(cfg.eval_horizons):
            ncs = np.array([r.nc_series[horizon] for r in records])
            ious = np.array([r.max_iou_series[horizon] for r in records])
            nis = []
            for r in records:
                try:
                    nis.append(normalized_improvement(r.initial_nc, r.nc_series[horizon]))
                except DegenerateStartError:
                    nis.append(0.0)
            nis = np.array(nis)
            sr_full = sum(success(r, 0.9, 0.8, horizon) for r in records)
            sr_nc = sum(success(r, 0.9, 0.0, horizon) for r in records)
            rows.append(EvalRow(garment, horizon,
                                float(ncs.mean()), float(ncs.std()),
                                float(nis.mean()), float(nis.std()),
                                float(ious.mean()), float(ious.std()),
                                int(sr_full), int(sr_nc), len(records)))
    return EvalTable(rows, by_garment)
