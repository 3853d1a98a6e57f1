"""Experiment configuration: a line-oriented ``key = value`` file with dotted
section prefixes, mapped onto the per-module config dataclasses."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields

import numpy as np

from .dataset import MixtureConfig
from .errors import ConfigError
from .metrics import MaxIoUParams
from .planner import PlannerConfig
from .rewards import RewardParams
from .rssm.model import RSSMConfig
from .sim import SimParams, Window
from .workspace import CameraModel, WorkspaceSpec


@dataclass
class ExperimentConfig:
    sim: SimParams = field(default_factory=SimParams)
    rewards: RewardParams = field(default_factory=RewardParams)
    rssm: RSSMConfig = field(default_factory=RSSMConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    mixture: MixtureConfig = field(default_factory=MixtureConfig)
    iou: MaxIoUParams = field(default_factory=MaxIoUParams)
    camera: CameraModel = field(default_factory=CameraModel)
    workspace: WorkspaceSpec = field(default_factory=WorkspaceSpec)
    window: Window = field(default_factory=Window)
    garments: tuple = ("square",)
    eval_seeds: tuple = tuple(range(30))
    eval_horizons: tuple = (10, 20, 30)
    difficulty: float = 1.0
    resolution: int = 32
    out_dir: str = "runs"
    apply_workspace_constraint: bool = False

    def __post_init__(self):
        if not self.eval_seeds:
            raise ConfigError("evaluation seed list must be nonempty")


# flat key aliases for the camera/workspace section required on the wire
_CAMERA_KEYS = {
    "fov_h_deg": ("camera", "fov_h_deg"),
    "fov_v_deg": ("camera", "fov_v_deg"),
    "rows": ("camera", "rows"),
    "cols": ("camera", "cols"),
    "cam_height_m": ("camera", "height"),
    "base_x_m": ("workspace", "base", 0),
    "base_y_m": ("workspace", "base", 1),
    "r_near_m": ("workspace", "r_near"),
    "r_far_m": ("workspace", "r_far"),
}


def _coerce(current, raw: str):
    if current is None:
        try:
            return int(raw)
        except ValueError:
            try:
                return float(raw)
            except ValueError:
                return raw
    if isinstance(current, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"expected boolean, got {raw!r}")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, tuple):
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        if current and isinstance(current[0], str):
            return tuple(parts)
        if current and isinstance(current[0], int) and not isinstance(current[0], bool):
            return tuple(int(p) for p in parts)
        return tuple(float(p) for p in parts)
    return raw


def parse_config_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = base or ExperimentConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if "." in key:
            section, _, attr = key.partition(".")
            if section in ("camera", "workspace") and attr in _CAMERA_KEYS:
                key_path = _CAMERA_KEYS[attr]
            else:
                key_path = (section, attr)
            target = getattr(cfg, key_path[0], None)
            if target is None:
                raise ConfigError(f"line {lineno}: unknown section {key_path[0]!r}")
            attr = key_path[1]
            if len(key_path) == 3:
                current = list(getattr(target, attr))
                current[key_path[2]] = float(raw)
                setattr(target, attr, tuple(current))
                continue
            if not hasattr(target, attr):
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            setattr(target, attr, _coerce(getattr(target, attr), raw))
        else:
            if not hasattr(cfg, key):
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            setattr(cfg, key, _coerce(getattr(cfg, key), raw))
    # re-run invariant checks on mutated dataclasses
    for section in (cfg.sim, cfg.rewards, cfg.rssm, cfg.planner, cfg.mixture,
                    cfg.camera, cfg.workspace):
        if hasattr(section, "__post_init__"):
            section.__post_init__()
    return cfg


def load_config(path: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read(), base)


def dump_config(cfg: ExperimentConfig) -> str:
    """Serialize the full configuration, including the reward parameters and
    the camera/workspace keys under their wire names."""
    lines = []
    simple_sections = {
        "sim": cfg.sim, "rewards": cfg.rewards, "rssm": cfg.rssm,
        "planner": cfg.planner, "mixture": cfg.mixture, "iou": cfg.iou,
    }
    for name, section in simple_sections.items():
        for f in fields(section):
            value = getattr(section, f.name)
            if isinstance(value, tuple):
                value = ", ".join(str(v) for v in value)
            if value is None:
                continue
            lines.append(f"{name}.{f.name} = {value}")
    lines.append(f"camera.fov_h_deg = {cfg.camera.fov_h_deg}")
    lines.append(f"camera.fov_v_deg = {cfg.camera.fov_v_deg}")
    lines.append(f"camera.rows = {cfg.camera.rows}")
    lines.append(f"camera.cols = {cfg.camera.cols}")
    lines.append(f"camera.cam_height_m = {cfg.camera.height}")
    lines.append(f"workspace.base_x_m = {cfg.workspace.base[0]}")
    lines.append(f"workspace.base_y_m = {cfg.workspace.base[1]}")
    lines.append(f"workspace.r_near_m = {cfg.workspace.r_near}")
    lines.append(f"workspace.r_far_m = {cfg.workspace.r_far}")
    lines.append(f"window.side = {cfg.window.side}")
    for key in ("garments", "eval_seeds", "eval_horizons"):
        lines.append(f"{key} = {', '.join(str(v) for v in getattr(cfg, key))}")
    for key in ("difficulty", "resolution", "out_dir", "apply_workspace_constraint"):
        lines.append(f"{key} = {getattr(cfg, key)}")
    return "\n".join(lines) + "\n"


def save_config(cfg: ExperimentConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_config(cfg))
