"""Flattening metrics over binary masks.

Coverage is normalized by the garment's flattened area, alignment is the
intersection-over-union between current and goal masks maximized over rigid
alignments (rotations about the centroid plus an integer translation search),
and image quality for reconstructions is reported as MSE / SSIM.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .errors import DegenerateStartError, DimensionError, InvalidTemplateError, UndefinedIoUError
from .masks import MaskImage, rotate_bits_nearest

NC_CLAMP = 1.05


@dataclass
class MaxIoUParams:
    """Search space of the rigid-alignment IoU maximization."""

    n_angles: int = 36
    refine_radius_px: int | None = None   # None: resolution // 4

    def radius_for(self, resolution: int) -> int:
        return self.refine_radius_px if self.refine_radius_px is not None else resolution // 4


@dataclass
class EvalRecord:
    """Per-step metric series of one evaluation episode."""

    nc_series: list
    max_iou_series: list
    horizon: int
    initial_nc: float

    def __post_init__(self):
        if len(self.nc_series) != self.horizon + 1 or len(self.max_iou_series) != self.horizon + 1:
            raise DimensionError(
                f"series length must be horizon+1={self.horizon + 1}, "
                f"got {len(self.nc_series)}/{len(self.max_iou_series)}"
            )
        for v in list(self.nc_series) + list(self.max_iou_series):
            if not (0.0 <= v <= NC_CLAMP):
                raise ValueError(f"metric value {v} outside [0, {NC_CLAMP}]")


def normalized_coverage(mask: MaskImage, flat_area: float, window_side: float | None = None) -> float:
    """Covered pixel area divided by the flattened-garment area, clamped at 1.05."""
    if flat_area <= 0:
        raise InvalidTemplateError(f"flat_area must be positive, got {flat_area}")
    side = mask.window_side if window_side is None else window_side
    pixel_area = (side / mask.resolution) ** 2
    return min(mask.count() * pixel_area / flat_area, NC_CLAMP)


def normalized_improvement(nc_0: float, nc_t: float) -> float:
    """Coverage gained relative to the maximum possible gain; negative on regression."""
    if nc_0 >= 1.0:
        raise DegenerateStartError(f"initial coverage {nc_0} leaves no room to improve")
    return (nc_t - nc_0) / (1.0 - nc_0)


def _intersections_all_offsets(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Integer intersection counts of a with b shifted by every offset.

    Returned array C has shape (2R-1, 2R-1) with C[dr+R-1, dc+R-1] =
    |a AND shift(b, dr, dc)|.
    """
    c = fftconvolve(a.astype(np.float64), b[::-1, ::-1].astype(np.float64), mode="full")
    return np.rint(c).astype(np.int64)


def _crop_counts(b: np.ndarray) -> np.ndarray:
    # prefix sums so the number of b-pixels surviving a shift is O(1) per offset
    return np.pad(b.astype(np.int64), ((1, 0), (1, 0))).cumsum(0).cumsum(1)


def _shifted_count(prefix: np.ndarray, res: int, dr: int, dc: int) -> int:
    r0, r1 = max(0, -dr), min(res, res - dr)
    c0, c1 = max(0, -dc), min(res, res - dc)
    if r0 >= r1 or c0 >= c1:
        return 0
    return int(prefix[r1, c1] - prefix[r0, c1] - prefix[r1, c0] + prefix[r0, c0])


def max_iou(mask_a: MaskImage, mask_b: MaskImage, params: MaxIoUParams | None = None) -> float:
    """IoU of mask_a against mask_b maximized over rigid alignments of mask_b.

    mask_b is rotated about its own centroid at ``n_angles`` evenly spaced
    angles; each rotation is centroid-aligned to mask_a and refined by an
    exhaustive integer translation search within ``refine_radius_px``.
    """
    if mask_a.bits.shape != mask_b.bits.shape:
        raise DimensionError(f"mask shapes differ: {mask_a.bits.shape} vs {mask_b.bits.shape}")
    a_empty, b_empty = mask_a.is_empty(), mask_b.is_empty()
    if a_empty and b_empty:
        raise UndefinedIoUError("IoU of two empty masks is undefined")
    if a_empty or b_empty:
        return 0.0

    params = params or MaxIoUParams()
    res = mask_a.resolution
    radius = params.radius_for(res)
    a = mask_a.bits
    count_a = int(a.sum())
    centroid_a = mask_a.centroid_px()
    centroid_b = mask_b.centroid_px()

    best = 0.0
    angles = 2.0 * np.pi * np.arange(params.n_angles) / params.n_angles
    for angle in angles:
        if angle == 0.0:
            b_rot = mask_b.bits
        else:
            b_rot = rotate_bits_nearest(mask_b.bits, angle, center_rc=tuple(centroid_b))
        if not b_rot.any():
            continue
        rows, cols = np.nonzero(b_rot)
        centroid_rot = np.array([rows.mean(), cols.mean()])
        base = np.rint(centroid_a - centroid_rot).astype(int)
        inter_all = _intersections_all_offsets(a, b_rot)
        prefix = _crop_counts(b_rot)
        for dr in range(base[0] - radius, base[0] + radius + 1):
            if not -res < dr < res:
                continue
            for dc in range(base[1] - radius, base[1] + radius + 1):
                if not -res < dc < res:
                    continue
                inter = inter_all[dr + res - 1, dc + res - 1]
                union = count_a + _shifted_count(prefix, res, dr, dc) - inter
                if union > 0:
                    iou = inter / union
                    if iou > best:
                        best = iou
    return float(best)


def success(record: EvalRecord, nc_thresh: float, iou_thresh: float, horizon: int) -> bool:
    """True iff some single step within the horizon meets both thresholds."""
    if horizon > record.horizon:
        raise DimensionError(f"record covers horizon {record.horizon} < requested {horizon}")
    for t in range(horizon + 1):
        if record.nc_series[t] >= nc_thresh and record.max_iou_series[t] >= iou_thresh:
            return True
    return False


def mse_ssim(image_a: np.ndarray, image_b: np.ndarray, window: int = 8) -> tuple[float, float]:
    """Pixelwise MSE and mean SSIM over a sliding uniform window.

    Inputs are float images in [0, 1]; SSIM uses the standard stabilizers
    C1=(0.01)^2, C2=(0.03)^2 for unit dynamic range and population moments.
    """
    a = np.asarray(image_a, dtype=np.float64)
    b = np.asarray(image_b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))

    from numpy.lib.stride_tricks import sliding_window_view

    wa = sliding_window_view(a, (window, window)).reshape(-1, window * window)
    wb = sliding_window_view(b, (window, window)).reshape(-1, window * window)
    mu_a = wa.mean(axis=1)
    mu_b = wb.mean(axis=1)
    var_a = wa.var(axis=1)
    var_b = wb.var(axis=1)
    cov = (wa * wb).mean(axis=1) - mu_a * mu_b
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    ssim_map = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    )
    return mse, float(ssim_map.mean())
