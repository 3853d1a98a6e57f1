"""Step rewards for flattening: a tanh-squashed coverage/alignment gain and its
augmented variant with a flattened-state bonus and a disruption penalty."""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass
class RewardParams:
    alpha: float = 1.0              # coverage gain
    beta: float = 2.0               # alignment gain
    bonus_b: float = 0.7            # reward for holding a flattened state
    flatten_thresh: float = 0.95
    disrupt_prev_thresh: float = 0.9
    disrupt_cur_thresh: float = 0.9

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("gains must be nonnegative")
        if not 0.0 < self.bonus_b < 1.0:
            raise ValueError(f"bonus_b must lie in (0, 1), got {self.bonus_b}")
        if self.flatten_thresh <= self.disrupt_cur_thresh:
            raise ValueError("flatten_thresh must exceed disrupt_cur_thresh")


@dataclass
class StepDeltas:
    """Coverage/alignment changes of one transition plus the resulting coverage."""

    d_coverage: float   # NC_t - NC_{t-1}
    d_iou: float        # MaxIoU_t - MaxIoU_{t-1}
    nc_t: float

    def __post_init__(self):
        if not 0.0 <= self.nc_t <= 1.05:
            raise ValueError(f"nc_t {self.nc_t} outside [0, 1.05]")
        if not -1.05 <= self.d_coverage <= 1.05 or not -1.05 <= self.d_iou <= 1.05:
            raise ValueError("deltas outside [-1.05, 1.05]")


def reward_sfa(deltas: StepDeltas, params: RewardParams) -> float:
    """max(tanh(alpha * d_coverage + beta * d_iou), 0)."""
    return max(math.tanh(params.alpha * deltas.d_coverage + params.beta * deltas.d_iou), 0.0)


def reward_ca(deltas: StepDeltas, params: RewardParams) -> float:
    """Augmented coverage-alignment reward.

    Cases in priority order: zero when a nearly flattened state got disrupted
    (previous NC above ``disrupt_prev_thresh`` but current below
    ``disrupt_cur_thresh``), the flat bonus when NC is at least
    ``flatten_thresh``, otherwise the squashed gain of ``reward_sfa``.
    """
    nc_prev = deltas.nc_t - deltas.d_coverage
    if nc_prev > params.disrupt_prev_thresh and deltas.nc_t < params.disrupt_cur_thresh:
        return 0.0
    if deltas.nc_t >= params.flatten_thresh:
        return params.bonus_b
    return reward_sfa(deltas, params)
