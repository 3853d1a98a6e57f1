"""Binary top-down mask images and the planar transforms shared by metrics,
augmentation and planning.

Conventions (used everywhere in the package):
  - pixel (row r, col c): row 0 is the top of the image,
  - world/normalized x grows with c, world/normalized y grows upward (against r),
  - normalized coordinates span [-1, 1] across the window side.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DatasetFormatError, DimensionError


@dataclass
class MaskImage:
    """Square binary raster of the cloth inside a world-aligned window."""

    bits: np.ndarray                       # (H, W) uint8, values 0/1
    window_side: float = 0.48              # world side length covered (m)
    window_center: tuple = (0.0, 0.0)      # world center of the window (m)

    def __post_init__(self):
        self.bits = np.ascontiguousarray(self.bits, dtype=np.uint8)
        if self.bits.ndim != 2 or self.bits.shape[0] != self.bits.shape[1]:
            raise DimensionError(f"mask must be square, got shape {self.bits.shape}")
        if not np.isin(self.bits, (0, 1)).all():
            raise ValueError("mask bits must be 0/1")

    @property
    def resolution(self) -> int:
        return self.bits.shape[0]

    @property
    def pixel_size(self) -> float:
        return self.window_side / self.resolution

    def count(self) -> int:
        return int(self.bits.sum())

    def is_empty(self) -> bool:
        return not self.bits.any()

    def copy(self) -> "MaskImage":
        return MaskImage(self.bits.copy(), self.window_side, self.window_center)

    def centroid_px(self) -> np.ndarray:
        """Mean (row, col) of the set pixels; the mask must be nonempty."""
        rows, cols = np.nonzero(self.bits)
        if rows.size == 0:
            raise ValueError("centroid of an empty mask is undefined")
        return np.array([rows.mean(), cols.mean()])


def pixel_centers_normalized(resolution: int) -> tuple[np.ndarray, np.ndarray]:
    """Normalized (x, y) coordinates of every pixel center, as two (R, R) grids."""
    idx = (np.arange(resolution) + 0.5) / resolution      # in (0, 1)
    x = np.tile(2.0 * idx - 1.0, (resolution, 1))
    y = np.tile((1.0 - 2.0 * idx)[:, None], (1, resolution))
    return x, y


def normalized_to_pixel(xy, resolution: int) -> np.ndarray:
    """Map normalized (x, y) [-1, 1] to continuous (row, col) pixel coordinates."""
    xy = np.asarray(xy, dtype=np.float64)
    col = (xy[..., 0] + 1.0) * 0.5 * resolution - 0.5
    row = (1.0 - xy[..., 1]) * 0.5 * resolution - 0.5
    return np.stack([row, col], axis=-1)


def pixel_to_normalized(rc, resolution: int) -> np.ndarray:
    """Map (row, col) pixel coordinates to normalized (x, y) at pixel centers."""
    rc = np.asarray(rc, dtype=np.float64)
    x = (rc[..., 1] + 0.5) * 2.0 / resolution - 1.0
    y = 1.0 - (rc[..., 0] + 0.5) * 2.0 / resolution
    return np.stack([x, y], axis=-1)


def rotate90_bits(bits: np.ndarray, quarter_turns: int) -> np.ndarray:
    """Rotate by k*90 degrees, consistent with the planar map (x,y)->(-y,x) per turn."""
    return np.ascontiguousarray(np.rot90(bits, quarter_turns % 4))


def flip_bits(bits: np.ndarray) -> np.ndarray:
    """Mirror across the vertical axis, consistent with (x,y)->(-x,y)."""
    return np.ascontiguousarray(bits[:, ::-1])


def transform_action_xy(xy: np.ndarray, quarter_turns: int, flip: bool) -> np.ndarray:
    """Apply the same planar map to normalized (x, y) points that rotate90/flip
    apply to mask pixels. Flip is applied first, then the rotation."""
    x, y = np.asarray(xy, dtype=np.float64)[..., 0], np.asarray(xy, dtype=np.float64)[..., 1]
    if flip:
        x = -x
    for _ in range(quarter_turns % 4):
        x, y = -y, x
    return np.stack([x, y], axis=-1)


def transform_bits(bits: np.ndarray, quarter_turns: int, flip: bool) -> np.ndarray:
    out = flip_bits(bits) if flip else bits
    return rotate90_bits(out, quarter_turns)


def shift_bits(bits: np.ndarray, dr: int, dc: int) -> np.ndarray:
    """Integer translation padding with zeros (no wraparound)."""
    res = bits.shape[0]
    out = np.zeros_like(bits)
    src_r = slice(max(0, -dr), min(res, res - dr))
    src_c = slice(max(0, -dc), min(res, res - dc))
    dst_r = slice(max(0, dr), min(res, res + dr))
    dst_c = slice(max(0, dc), min(res, res + dc))
    if src_r.start < src_r.stop and src_c.start < src_c.stop:
        out[dst_r, dst_c] = bits[src_r, src_c]
    return out


def rotate_bits_nearest(bits: np.ndarray, angle_rad: float, center_rc=None) -> np.ndarray:
    """Rotate a binary image by an arbitrary angle about ``center_rc`` (row, col)
    using inverse-mapped nearest-neighbor sampling, keeping the mask binary.

    Positive angles turn the content the same way as one quarter turn of
    ``rotate90_bits`` at angle pi/2 (checked by the test suite).
    """
    res = bits.shape[0]
    if center_rc is None:
        center_rc = ((res - 1) / 2.0, (res - 1) / 2.0)
    cr, cc = center_rc
    rr, cc_grid = np.meshgrid(np.arange(res), np.arange(res), indexing="ij")
    # Image rows grow downward, so the world-CCW forward map is
    # [dr'; dc'] = [[cos, -sin], [sin, cos]] [dr; dc]; sample with its inverse.
    cos_a, sin_a = np.cos(angle_rad), np.sin(angle_rad)
    dr = rr - cr
    dc = cc_grid - cc
    src_r = cos_a * dr + sin_a * dc + cr
    src_c = -sin_a * dr + cos_a * dc + cc
    ri = np.rint(src_r).astype(np.int64)
    ci = np.rint(src_c).astype(np.int64)
    inside = (ri >= 0) & (ri < res) & (ci >= 0) & (ci < res)
    out = np.zeros_like(bits)
    out[inside] = bits[ri[inside], ci[inside]]
    return out


def pack_mask_bits(bits: np.ndarray) -> bytes:
    return np.packbits(bits.astype(np.uint8), axis=None).tobytes()


def unpack_mask_bits(raw: bytes, resolution: int) -> np.ndarray:
    need = resolution * resolution
    flat = np.unpackbits(np.frombuffer(raw, dtype=np.uint8), count=need)
    return flat.reshape(resolution, resolution).astype(np.uint8)


def write_pgm(mask: MaskImage, path) -> None:
    """Portable graymap (P5) interchange: 0 = background, 255 = cloth."""
    res = mask.resolution
    header = f"P5\n{res} {res}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write((mask.bits * np.uint8(255)).tobytes())


def read_pgm(path, window_side: float = 0.48, window_center=(0.0, 0.0)) -> MaskImage:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P5"):
        raise DatasetFormatError(f"{path}: not a P5 graymap")
    fields, pos = [], 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    width, height, maxval = fields
    if width != height:
        raise DatasetFormatError(f"{path}: mask must be square, got {width}x{height}")
    raw = np.frombuffer(data[pos : pos + width * height], dtype=np.uint8)
    if raw.size != width * height:
        raise DatasetFormatError(f"{path}: truncated pixel data")
    bits = (raw.reshape(height, width) > maxval // 2).astype(np.uint8)
    return MaskImage(bits, window_side, window_center)
