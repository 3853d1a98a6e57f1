"""Training-time augmentation.

Observation trajectories get one rotation/flip per trajectory, applied
identically to every mask, the goal and every action's pick/place pair.
Goal inputs additionally get a fresh rotation/flip plus a Gaussian pixel
translation per step, clipped so the silhouette stays inside the frame.
"""

from __future__ import annotations

import numpy as np

from ..masks import shift_bits, transform_action_xy, transform_bits


def transform_actions(actions: np.ndarray, quarter_turns: int, flip: bool) -> np.ndarray:
    """Apply the planar map to (..., 4) pick/place action arrays."""
    a = np.asarray(actions, dtype=np.float64)
    pick = transform_action_xy(a[..., 0:2], quarter_turns, flip)
    place = transform_action_xy(a[..., 2:4], quarter_turns, flip)
    return np.concatenate([pick, place], axis=-1)


def augment_trajectory(obs: np.ndarray, actions: np.ndarray, goal: np.ndarray,
                       rng: np.random.Generator):
    """One transform from {4 rotations} x {flip, no flip} for a whole
    trajectory. obs: (T, R, R), actions: (T, 4), goal: (R, R)."""
    quarter_turns = int(rng.integers(4))
    flip = bool(rng.integers(2))
    new_obs = np.stack([transform_bits(m, quarter_turns, flip) for m in obs])
    new_goal = transform_bits(goal, quarter_turns, flip)
    return new_obs, transform_actions(actions, quarter_turns, flip), new_goal


def max_shift_inside(bits: np.ndarray) -> tuple:
    """Translation bounds (dr_min, dr_max, dc_min, dc_max) that keep every set
    pixel inside the frame."""
    res = bits.shape[0]
    rows, cols = np.nonzero(bits)
    if rows.size == 0:
        return (0, 0, 0, 0)
    return (-int(rows.min()), int(res - 1 - rows.max()),
            -int(cols.min()), int(res - 1 - cols.max()))


def augment_goal(goal: np.ndarray, rng: np.random.Generator,
                 translate_std: float = 0.2) -> np.ndarray:
    """Independent per-step goal transform: rotation/flip plus a translation
    drawn per axis from N(0, translate_std^2) in normalized window units,
    rounded to pixels and clipped to keep the mask in frame."""
    res = goal.shape[0]
    out = transform_bits(goal, int(rng.integers(4)), bool(rng.integers(2)))
    if translate_std > 0:
        # normalized units span [-1, 1], so one unit is res/2 pixels
        dx = int(np.rint(rng.normal(0.0, translate_std) * res / 2.0))
        dy = int(np.rint(rng.normal(0.0, translate_std) * res / 2.0))
        dr_min, dr_max, dc_min, dc_max = max_shift_inside(out)
        dr = int(np.clip(-dy, dr_min, dr_max))   # +y in world is -rows
        dc = int(np.clip(dx, dc_min, dc_max))
        if dr or dc:
            out = shift_bits(out, dr, dc)
    return out
