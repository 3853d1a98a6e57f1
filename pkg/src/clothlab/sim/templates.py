"""Garment templates: polygon outlines triangulated on a regular grid.

An outline file holds one "x y" vertex per line (meters, polygon closed
implicitly). The loader grids the outline's bounding box, keeps the cells
whose centers fall inside the polygon, and builds structural springs along
cell edges, shear springs across cell diagonals and bend springs across
vertex pairs two steps apart.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidTemplateError, TemplateNotFoundError

GARMENT_NAMES = ("square", "tee", "trousers", "skirt", "dress")

# Max silhouette extent allowed relative to the observation window.
DEFAULT_WINDOW_SIDE = 0.48
_FIT_FRACTION = 0.9

# Outline coordinates are authored on a 0.03 m lattice; the default grid pitch
# matches it so kept cells tile the polygon exactly and flat_area is exact.
_LATTICE = 0.03

STRUCTURAL, SHEAR, BEND = 0, 1, 2


@dataclass
class GarmentTemplate:
    name: str
    rest_positions: np.ndarray          # (N, 2) flattened layout, centered at origin
    spring_edges: np.ndarray            # (S, 2) vertex indices
    spring_rest: np.ndarray             # (S,) rest lengths (m)
    spring_class: np.ndarray            # (S,) STRUCTURAL / SHEAR / BEND
    faces: np.ndarray                   # (F, 3) triangle indices for rasterization
    flat_area: float                    # area of the flattened silhouette (m^2)
    pitch: float

    @property
    def vertex_count(self) -> int:
        return len(self.rest_positions)

    def class_count(self, cls: int) -> int:
        return int((self.spring_class == cls).sum())

    def corner_indices(self) -> np.ndarray:
        """Extreme silhouette vertices: one per bounding-box corner, by
        nearest rest position. Used by the scripted flattening oracle."""
        p = self.rest_positions
        lo, hi = p.min(axis=0), p.max(axis=0)
        corners = np.array([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]])
        idx = [int(np.argmin(((p - c) ** 2).sum(axis=1))) for c in corners]
        return np.unique(idx)


def _points_in_polygon(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Even-odd rule membership for an array of planar points."""
    x, y = points[:, 0], points[:, 1]
    inside = np.zeros(len(points), dtype=bool)
    n = len(poly)
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        crosses = (y0 > y) != (y1 > y)
        if not crosses.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            x_at = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
        inside ^= crosses & (x < x_at)
    return inside


def _read_outline(path: str) -> np.ndarray:
    pts = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            xs, ys = line.split()
            pts.append((float(xs), float(ys)))
    if len(pts) < 3:
        raise InvalidTemplateError(f"{path}: outline needs at least 3 vertices")
    return np.asarray(pts, dtype=np.float64)


def builtin_outline_dir() -> str:
    return os.path.join(os.path.dirname(__file__), "outlines")


def default_resolution(name: str, templates_dir: str | None = None) -> int:
    """Vertices along the longer bounding-box side at the authoring lattice."""
    outline = _read_outline(_outline_path(name, templates_dir))
    span = (outline.max(axis=0) - outline.min(axis=0)).max()
    return int(round(span / _LATTICE)) + 1


def _outline_path(name: str, templates_dir: str | None) -> str:
    directory = templates_dir or builtin_outline_dir()
    path = os.path.join(directory, f"{name}.txt")
    if not os.path.isfile(path):
        raise TemplateNotFoundError(f"no template {name!r} in {directory}")
    return path


def load_template(name: str, resolution: int | None = None,
                  templates_dir: str | None = None) -> GarmentTemplate:
    """Build a spring-mesh template from an outline file.

    ``resolution`` is the vertex count along the longer bounding-box side
    (default: the authoring-lattice resolution). Deterministic for fixed
    inputs.
    """
    outline = _read_outline(_outline_path(name, templates_dir))
    if resolution is None:
        resolution = default_resolution(name, templates_dir)
    if resolution < 3:
        raise InvalidTemplateError(f"resolution must be >= 3, got {resolution}")

    lo = outline.min(axis=0)
    hi = outline.max(axis=0)
    span = hi - lo
    if span.max() > _FIT_FRACTION * DEFAULT_WINDOW_SIDE:
        raise InvalidTemplateError(
            f"{name}: silhouette {span} exceeds {_FIT_FRACTION} of the "
            f"{DEFAULT_WINDOW_SIDE} m observation window"
        )
    pitch = float(span.max()) / (resolution - 1)
    nx = int(round(span[0] / pitch)) + 1
    ny = int(round(span[1] / pitch)) + 1

    # grid vertices (ix, iy) -> position; keep cells whose center is inside
    xs = lo[0] + pitch * np.arange(nx)
    ys = lo[1] + pitch * np.arange(ny)
    cell_ix, cell_iy = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1), indexing="ij")
    centers = np.stack(
        [xs[cell_ix.ravel()] + pitch / 2.0, ys[cell_iy.ravel()] + pitch / 2.0], axis=1
    )
    kept = _points_in_polygon(centers, outline).reshape(nx - 1, ny - 1)
    if not kept.any():
        raise InvalidTemplateError(f"{name}: no grid cell falls inside the outline at resolution {resolution}")

    used = np.zeros((nx, ny), dtype=bool)
    kx, ky = np.nonzero(kept)
    for dx in (0, 1):
        for dy in (0, 1):
            used[kx + dx, ky + dy] = True
    index = -np.ones((nx, ny), dtype=np.int64)
    ux, uy = np.nonzero(used)
    index[ux, uy] = np.arange(len(ux))
    positions = np.stack([xs[ux], ys[uy]], axis=1)
    # center the mesh on the origin
    positions -= (lo + hi) / 2.0

    edges, rest, cls = [], [], []
    seen = set()

    def add_spring(a: int, b: int, length: float, kind: int):
        key = (min(a, b), max(a, b))
        if key in seen:
            return
        seen.add(key)
        edges.append(key)
        rest.append(length)
        cls.append(kind)

    faces = []
    diag = pitch * np.sqrt(2.0)
    for cx, cy in zip(kx, ky):
        v00 = index[cx, cy]
        v10 = index[cx + 1, cy]
        v01 = index[cx, cy + 1]
        v11 = index[cx + 1, cy + 1]
        add_spring(v00, v10, pitch, STRUCTURAL)
        add_spring(v00, v01, pitch, STRUCTURAL)
        add_spring(v10, v11, pitch, STRUCTURAL)
        add_spring(v01, v11, pitch, STRUCTURAL)
        add_spring(v00, v11, diag, SHEAR)
        add_spring(v10, v01, diag, SHEAR)
        faces.append((v00, v10, v11))
        faces.append((v00, v11, v01))

    # bend springs skip one vertex along each axis where the chain exists
    for ix in range(nx):
        for iy in range(ny):
            a = index[ix, iy]
            if a < 0:
                continue
            if ix + 2 < nx and index[ix + 1, iy] >= 0 and index[ix + 2, iy] >= 0:
                if (min(a, index[ix + 1, iy]), max(a, index[ix + 1, iy])) in seen:
                    add_spring(a, index[ix + 2, iy], 2 * pitch, BEND)
            if iy + 2 < ny and index[ix, iy + 1] >= 0 and index[ix, iy + 2] >= 0:
                if (min(a, index[ix, iy + 1]), max(a, index[ix, iy + 1])) in seen:
                    add_spring(a, index[ix, iy + 2], 2 * pitch, BEND)

    template = GarmentTemplate(
        name=name,
        rest_positions=positions,
        spring_edges=np.asarray(edges, dtype=np.int64),
        spring_rest=np.asarray(rest, dtype=np.float64),
        spring_class=np.asarray(cls, dtype=np.uint8),
        faces=np.asarray(faces, dtype=np.int64),
        flat_area=float(kept.sum()) * pitch * pitch,
        pitch=pitch,
    )
    _check_connected(template)
    return template


def _check_connected(template: GarmentTemplate):
    n = template.vertex_count
    adj: list[list[int]] = [[] for _ in range(n)]
    for a, b in template.spring_edges[template.spring_class == STRUCTURAL]:
        adj[a].append(b)
        adj[b].append(a)
    seen = np.zeros(n, dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        v = stack.pop()
        for w in adj[v]:
            if not seen[w]:
                seen[w] = True
                stack.append(w)
    if not seen.all():
        raise InvalidTemplateError(
            f"{template.name}: spring graph disconnected ({int(seen.sum())}/{n} reachable); "
            "raise the resolution or widen the outline"
        )
