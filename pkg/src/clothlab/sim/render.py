"""Orthographic top-down rasterization of the cloth mesh into a binary mask."""

from __future__ import annotations

import numpy as np

from ..masks import MaskImage
from .engine import ClothState, Window
from .templates import GarmentTemplate

RENDER_RESOLUTIONS = (32, 64, 128)


def render_mask(state: ClothState, template: GarmentTemplate,
                window: Window | None = None, resolution: int = 32) -> MaskImage:
    """A pixel is set iff any mesh triangle covers its center (edges inclusive)."""
    if resolution not in RENDER_RESOLUTIONS:
        raise ValueError(f"resolution must be one of {RENDER_RESOLUTIONS}, got {resolution}")
    window = window or Window()
    bits = np.zeros((resolution, resolution), dtype=np.uint8)
    pixel = window.side / resolution
    cx, cy = window.center
    half = resolution / 2.0

    # pixel centers are computed relative to the window center so mirror
    # positions share the exact same float products (keeps rendering
    # bit-consistent under quarter-turn rotations of the scene)
    def col_center(c):
        return cx + (c + 0.5 - half) * pixel

    def row_center(r):
        return cy - (r + 0.5 - half) * pixel

    pts = state.positions[:, :2]
    tris = pts[template.faces]            # (F, 3, 2)

    for tri in tris:
        # candidate pixels: those whose centers fall in the triangle's bbox
        tx, ty = tri[:, 0], tri[:, 1]
        c_lo = int(np.ceil((tx.min() - cx) / pixel + half - 0.5)) - 1
        c_hi = int(np.floor((tx.max() - cx) / pixel + half - 0.5)) + 1
        r_lo = int(np.ceil(half - 0.5 - (ty.max() - cy) / pixel)) - 1
        r_hi = int(np.floor(half - 0.5 - (ty.min() - cy) / pixel)) + 1
        c_lo, c_hi = max(c_lo, 0), min(c_hi, resolution - 1)
        r_lo, r_hi = max(r_lo, 0), min(r_hi, resolution - 1)
        if c_lo > c_hi or r_lo > r_hi:
            continue
        cols = col_center(np.arange(c_lo, c_hi + 1).astype(np.float64))
        rows = row_center(np.arange(r_lo, r_hi + 1).astype(np.float64))
        px, py = np.meshgrid(cols, rows)

        # half-plane tests with orientation normalized to CCW
        area = (tx[1] - tx[0]) * (ty[2] - ty[0]) - (tx[2] - tx[0]) * (ty[1] - ty[0])
        if area < 0:
            tri = tri[::-1]
            tx, ty = tri[:, 0], tri[:, 1]
        inside = np.ones_like(px, dtype=bool)
        for i in range(3):
            ax, ay = tx[i], ty[i]
            bx, by = tx[(i + 1) % 3], ty[(i + 1) % 3]
            cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
            inside &= cross >= 0.0
        if inside.any():
            bits[r_lo : r_hi + 1, c_lo : c_hi + 1] |= inside.astype(np.uint8)

    return MaskImage(bits, window_side=window.side, window_center=tuple(window.center))


def render_flat_goal(template: GarmentTemplate, window: Window | None = None,
                     resolution: int = 32) -> MaskImage:
    """Mask of the flattened rest layout, used as the goal observation."""
    from .engine import rest_state

    window = window or Window()
    return render_mask(rest_state(template, window), template, window, resolution)
