"""Episode wrapper tying the simulator to masks, metrics and rewards.

One ClothEnv owns one simulator instance; masks come from the top-down
renderer, step metrics are normalized coverage and Max IoU against the
flattened goal, and the per-step reward is the coverage-alignment reward.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .masks import MaskImage
from .metrics import MaxIoUParams, max_iou, normalized_coverage
from .rewards import RewardParams, StepDeltas, reward_ca
from .sim import (
    PnPAction,
    SimParams,
    Window,
    crumple,
    execute_pnp,
    load_template,
    render_flat_goal,
    render_mask,
)


@dataclass
class StepResult:
    mask: MaskImage
    nc: float
    iou: float
    reward: float
    miss: bool
    grasped_vertex: int | None


class ClothEnv:
    def __init__(self, garment: str = "square", resolution: int = 32,
                 sim_params: SimParams | None = None, window: Window | None = None,
                 reward_params: RewardParams | None = None,
                 iou_params: MaxIoUParams | None = None,
                 template_resolution: int | None = None,
                 templates_dir: str | None = None):
        self.garment = garment
        self.resolution = resolution
        self.params = sim_params or SimParams()
        self.window = window or Window()
        self.reward_params = reward_params or RewardParams()
        self.iou_params = iou_params or MaxIoUParams()
        self.template = load_template(garment, template_resolution, templates_dir)
        self.goal_mask = render_flat_goal(self.template, self.window, resolution)
        self.state = None
        self.nc = 0.0
        self.iou = 0.0

    def render(self) -> MaskImage:
        return render_mask(self.state, self.template, self.window, self.resolution)

    def _metrics(self, mask: MaskImage) -> tuple[float, float]:
        nc = normalized_coverage(mask, self.template.flat_area)
        iou = max_iou(mask, self.goal_mask, self.iou_params)
        return nc, iou

    def reset(self, seed: int, difficulty: float = 1.0) -> StepResult:
        self.state = crumple(self.template, seed, difficulty, self.params, self.window)
        mask = self.render()
        self.nc, self.iou = self._metrics(mask)
        # the opening frame carries the no-op reward of its own coverage level
        reward = reward_ca(StepDeltas(0.0, 0.0, self.nc), self.reward_params)
        return StepResult(mask, self.nc, self.iou, reward, True, None)

    def step(self, action: PnPAction, rng: np.random.Generator) -> StepResult:
        if self.state is None:
            raise RuntimeError("reset the environment before stepping")
        self.state, report = execute_pnp(
            self.state, action, self.template, self.params, rng, self.window)
        mask = self.render()
        nc, iou = self._metrics(mask)
        deltas = StepDeltas(nc - self.nc, iou - self.iou, nc)
        reward = reward_ca(deltas, self.reward_params)
        self.nc, self.iou = nc, iou
        return StepResult(mask, nc, iou, reward, report.miss, report.grasped_vertex)
