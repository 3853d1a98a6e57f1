"""Camera geometry and the ring-workspace transfer heuristic.

A top-down pinhole camera maps pixels to table-plane points; the reachable
workspace is an annulus around the robot base. Planning windows prefer the
frame center and re-center on the cloth when the central window is empty.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NoClothVisibleError
from .masks import MaskImage


@dataclass
class CameraModel:
    fov_h_deg: float = 69.0
    fov_v_deg: float = 42.0
    rows: int = 720
    cols: int = 1280
    height: float = 0.72                  # meters above the table
    principal_point: tuple | None = None  # (u, v); None: frame center
    position: tuple = (0.0, 0.0)          # world (x, y) under the optical axis

    def __post_init__(self):
        if not 0.0 < self.fov_h_deg < 180.0 or not 0.0 < self.fov_v_deg < 180.0:
            raise ValueError("fields of view must lie in (0, 180) degrees")
        if self.height <= 0:
            raise ValueError("camera height must be positive")

    @property
    def fx(self) -> float:
        return (self.cols / 2.0) / np.tan(np.radians(self.fov_h_deg) / 2.0)

    @property
    def fy(self) -> float:
        return (self.rows / 2.0) / np.tan(np.radians(self.fov_v_deg) / 2.0)

    @property
    def pp(self) -> tuple:
        return self.principal_point or (self.cols / 2.0, self.rows / 2.0)


@dataclass
class WorkspaceSpec:
    base: tuple = (0.0, -0.35)    # robot base position on the table (m)
    r_near: float = 0.24
    r_far: float = 0.54

    def __post_init__(self):
        if not 0.0 < self.r_near < self.r_far:
            raise ValueError(f"need 0 < r_near < r_far, got ({self.r_near}, {self.r_far})")


@dataclass
class WindowSpec:
    center_px: tuple      # (u, v) pixel coordinates of the window center
    side_px: int
    world_side: float     # meters spanned on the table


def pixel_to_world(u, v, camera: CameraModel) -> np.ndarray:
    """Intersect the pixel ray with the table plane under the top-down pose.

    Image u grows with world x; image v grows downward, against world y.
    Accepts scalars or arrays.
    """
    pu, pv = camera.pp
    x = camera.position[0] + (np.asarray(u, dtype=np.float64) - pu) / camera.fx * camera.height
    y = camera.position[1] - (np.asarray(v, dtype=np.float64) - pv) / camera.fy * camera.height
    return np.stack([x, y], axis=-1)


def world_to_pixel(point, camera: CameraModel) -> np.ndarray:
    pu, pv = camera.pp
    point = np.asarray(point, dtype=np.float64)
    u = pu + (point[..., 0] - camera.position[0]) * camera.fx / camera.height
    v = pv - (point[..., 1] - camera.position[1]) * camera.fy / camera.height
    return np.stack([u, v], axis=-1)


def in_workspace(point, spec: WorkspaceSpec) -> bool | np.ndarray:
    """Closed-interval ring membership of the planar distance to the base."""
    point = np.asarray(point, dtype=np.float64)
    d = np.sqrt(((point[..., :2] - np.asarray(spec.base)) ** 2).sum(axis=-1))
    result = (d >= spec.r_near) & (d <= spec.r_far)
    return bool(result) if result.ndim == 0 else result


def default_window(camera: CameraModel, spec: WorkspaceSpec) -> WindowSpec:
    """Central square window sized to cover the reachable ring (2 * r_far)."""
    world_side = 2.0 * spec.r_far
    side_px = int(round(world_side * camera.fx / camera.height))
    side_px = min(side_px, camera.rows, camera.cols)
    pu, pv = camera.pp
    return WindowSpec((pu, pv), side_px, side_px * camera.height / camera.fx)


def workspace_mask(camera: CameraModel, spec: WorkspaceSpec, window: WindowSpec,
                   resolution: int = 32) -> MaskImage:
    """Ring membership sampled at resolution^2 points across the window."""
    u0 = window.center_px[0] - window.side_px / 2.0
    v0 = window.center_px[1] - window.side_px / 2.0
    step = window.side_px / resolution
    us = u0 + (np.arange(resolution) + 0.5) * step
    vs = v0 + (np.arange(resolution) + 0.5) * step
    uu, vv = np.meshgrid(us, vs)          # row index follows v
    pts = pixel_to_world(uu.ravel(), vv.ravel(), camera)
    bits = in_workspace(pts, spec).reshape(resolution, resolution).astype(np.uint8)
    center_world = pixel_to_world(window.center_px[0], window.center_px[1], camera)
    return MaskImage(bits, window_side=window.world_side,
                     window_center=tuple(np.asarray(center_world)))


def select_window(frame_cloth_mask: np.ndarray, default: WindowSpec) -> WindowSpec:
    """Keep the default window if any cloth pixel falls inside it; otherwise
    re-center a same-size window on the cloth centroid, clamped into frame."""
    bits = np.asarray(frame_cloth_mask)
    rows, cols = np.nonzero(bits)
    if rows.size == 0:
        raise NoClothVisibleError("no cloth pixel anywhere in the frame")
    half = default.side_px / 2.0
    u0, v0 = default.center_px[0] - half, default.center_px[1] - half
    inside = ((cols + 0.5 >= u0) & (cols + 0.5 <= u0 + default.side_px)
              & (rows + 0.5 >= v0) & (rows + 0.5 <= v0 + default.side_px))
    if inside.any():
        return default
    cu, cv = cols.mean() + 0.5, rows.mean() + 0.5
    n_rows, n_cols = bits.shape
    cu = float(np.clip(cu, half, n_cols - half))
    cv = float(np.clip(cv, half, n_rows - half))
    return WindowSpec((cu, cv), default.side_px, default.world_side)


def action_to_world(action, window: WindowSpec, camera: CameraModel,
                    spec: WorkspaceSpec | None = None):
    """Map a normalized window action to world pick/place points with an
    in-workspace audit flag for each."""
    a = np.asarray(action.as_array() if hasattr(action, "as_array") else action,
                   dtype=np.float64)
    half = window.side_px / 2.0

    def to_world(xy):
        u = window.center_px[0] + xy[0] * half
        v = window.center_px[1] - xy[1] * half
        return pixel_to_world(u, v, camera)

    pick_w = to_world(a[0:2])
    place_w = to_world(a[2:4])
    if spec is None:
        return pick_w, place_w, (True, True)
    return pick_w, place_w, (bool(in_workspace(pick_w, spec)),
                             bool(in_workspace(place_w, spec)))
