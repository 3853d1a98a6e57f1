"""Quasi-static mass-spring cloth on a table plane with a single-gripper
pick-and-place primitive.

Integration is semi-implicit Euler with global velocity damping, table
contact at z = 0 and Coulomb friction on contacting vertices. A grasped
vertex is a kinematic constraint moved along the gripper path.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import NumericError, SimInstabilityError
from .templates import GarmentTemplate, load_template

DIVERGENCE_LIMIT = 100.0  # any coordinate beyond this aborts integration


@dataclass
class Window:
    """Square observation region on the table plane."""

    side: float = 0.48
    center: tuple = (0.0, 0.0)

    def normalized_to_world(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=np.float64)
        return np.asarray(self.center) + xy * (self.side / 2.0)

    def world_to_normalized(self, world_xy) -> np.ndarray:
        world_xy = np.asarray(world_xy, dtype=np.float64)
        return (world_xy - np.asarray(self.center)) / (self.side / 2.0)


@dataclass
class SimParams:
    stiffness: tuple = (0.75, 0.02, 0.02)   # structural, shear, bend gains
    stiffness_scale: float = 40.0           # N/m per unit gain
    cloth_mass: float = 0.5                 # kg, split evenly over vertices
    gravity: float = 9.81
    damping: float = 3.0                    # 1/s global velocity damping
    friction: float = 0.8                   # Coulomb coefficient on the table
    dt: float = 1.0 / 240.0
    settle_tolerance: float = 0.005         # m/s
    max_settle_iters: int = 2000
    grasp_radius: float = 0.03
    lift_height: float = 0.05
    miss_probability: float = 0.0
    drag_speed: float = 0.4                 # m/s gripper speed
    strain_limit: float = 0.08              # max structural/shear overstretch
    strain_iters: int = 3                   # Jacobi projection passes per substep
    contact_mobility: float = 0.3           # projection share of on-table vertices

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.grasp_radius <= 0:
            raise ValueError("grasp_radius must be positive")
        if any(g < 0 for g in self.stiffness):
            raise ValueError("stiffness gains must be nonnegative")
        if not 0.0 <= self.miss_probability <= 1.0:
            raise ValueError("miss_probability must lie in [0, 1]")


@dataclass
class ClothState:
    positions: np.ndarray      # (N, 3), z >= 0 is height above the table
    velocities: np.ndarray     # (N, 3)
    template_id: str
    step_count: int = 0

    def copy(self) -> "ClothState":
        return ClothState(self.positions.copy(), self.velocities.copy(),
                          self.template_id, self.step_count)


@dataclass
class PnPAction:
    pick: tuple      # (x, y) in [-1, 1]^2 normalized window coordinates
    place: tuple

    def __post_init__(self):
        for v in (*self.pick, *self.place):
            if not -1.0 <= v <= 1.0:
                raise ValueError(f"action component {v} outside [-1, 1]")

    def as_array(self) -> np.ndarray:
        return np.array([*self.pick, *self.place], dtype=np.float64)

    @staticmethod
    def from_array(a) -> "PnPAction":
        a = np.asarray(a, dtype=np.float64)
        return PnPAction((float(a[0]), float(a[1])), (float(a[2]), float(a[3])))


@dataclass
class GraspReport:
    miss: bool
    grasped_vertex: int | None
    path_length: float


def rest_state(template: GarmentTemplate, window: Window | None = None) -> ClothState:
    window = window or Window()
    n = template.vertex_count
    pos = np.zeros((n, 3))
    pos[:, :2] = template.rest_positions + np.asarray(window.center)
    return ClothState(pos, np.zeros((n, 3)), template.name)


def _spring_constants(template: GarmentTemplate, params: SimParams) -> np.ndarray:
    gains = np.asarray(params.stiffness, dtype=np.float64)[template.spring_class]
    return gains * params.stiffness_scale


def _substeps(state: ClothState, template: GarmentTemplate, params: SimParams,
              n_steps: int, pinned: int | None = None,
              pin_path=None, check_tolerance: bool = False) -> int:
    """Integrate in place for up to n_steps; returns steps actually taken.

    pin_path(i) must yield the pinned vertex position at substep i. With
    check_tolerance the loop exits once the max vertex speed drops below
    settle_tolerance.
    """
    pos, vel = state.positions, state.velocities
    e0 = template.spring_edges[:, 0]
    e1 = template.spring_edges[:, 1]
    rest = template.spring_rest
    k = _spring_constants(template, params)
    n = template.vertex_count
    m_v = params.cloth_mass / n
    dt = params.dt
    damp = 1.0 / (1.0 + params.damping * dt)
    dv_friction = params.friction * params.gravity * dt

    # strain limiting keeps the mesh quasi-inextensible (bend springs excluded)
    limited = template.spring_class != 2
    le0, le1 = e0[limited], e1[limited]
    lmax = rest[limited] * (1.0 + params.strain_limit)
    lidx = np.concatenate([le0, le1])

    idx_all = np.concatenate([e0, e1])
    taken = 0
    for i in range(n_steps):
        d = pos[e1] - pos[e0]
        length = np.sqrt((d * d).sum(axis=1))
        np.maximum(length, 1e-9, out=length)
        coef = k * (length - rest) / length
        f = coef[:, None] * d
        force = np.zeros_like(pos)
        fvals = np.concatenate([f, -f])
        for dim in range(3):
            force[:, dim] = np.bincount(idx_all, weights=fvals[:, dim], minlength=n)
        force[:, 2] -= m_v * params.gravity

        vel += (dt / m_v) * force
        vel *= damp
        if pinned is not None:
            target = pin_path(i)
            vel[pinned] = (target - pos[pinned]) / dt
        prev = pos.copy()
        pos += dt * vel
        if pinned is not None:
            pos[pinned] = pin_path(i)

        # overstretch projection weighted by mobility: vertices pressed onto
        # the table take only a small share of each correction, so tension
        # cannot drag the whole resting sheet (that is friction's job); the
        # 0.5 relaxation keeps the Jacobi sweep from oscillating
        for _ in range(params.strain_iters):
            d = pos[le1] - pos[le0]
            length = np.sqrt((d * d).sum(axis=1))
            over = length > lmax
            if not over.any():
                break
            mobility = np.where(pos[:, 2] < 5e-4, params.contact_mobility, 1.0)
            if pinned is not None:
                mobility[pinned] = 0.0
            w0 = mobility[le0]
            w1 = mobility[le1]
            share = np.maximum(w0 + w1, 1e-12)
            gap = np.zeros_like(length)
            gap[over] = 0.5 * (1.0 - lmax[over] / length[over])
            corr0 = d * (gap * (w0 / share))[:, None]
            corr1 = d * (-gap * (w1 / share))[:, None]
            for dim in range(3):
                pos[:, dim] += np.bincount(lidx, weights=np.concatenate(
                    [corr0[:, dim], corr1[:, dim]]), minlength=n)
            if pinned is not None:
                pos[pinned] = pin_path(i)
        # velocities consistent with the projected positions, capped so a
        # projection jump cannot inject unbounded kinetic energy
        vel[:] = (pos - prev) / dt
        speeds = np.sqrt((vel * vel).sum(axis=1))
        fast = speeds > 2.0
        if fast.any():
            vel[fast] *= (2.0 / speeds[fast])[:, None]

        below = pos[:, 2] < 0.0
        if below.any():
            pos[below, 2] = 0.0
            vz = vel[below, 2]
            vel[below, 2] = np.maximum(vz, 0.0)
            vxy = vel[below, :2]
            speed = np.sqrt((vxy * vxy).sum(axis=1))
            with np.errstate(divide="ignore", invalid="ignore"):
                factor = np.where(speed > 1e-12,
                                  np.maximum(0.0, 1.0 - dv_friction / speed), 0.0)
            vel[below, :2] = vxy * factor[:, None]

        taken = i + 1
        if check_tolerance or (i % 50 == 49):
            top = np.abs(pos).max()
            if not np.isfinite(top):
                raise NumericError("non-finite vertex coordinate during integration")
            if top > DIVERGENCE_LIMIT:
                raise SimInstabilityError(
                    f"cloth diverged beyond {DIVERGENCE_LIMIT} m; "
                    f"dt={params.dt} with stiffness {params.stiffness} x {params.stiffness_scale} is unstable"
                )
        if check_tolerance:
            speeds = np.sqrt((vel * vel).sum(axis=1))
            if pinned is not None:
                speeds[pinned] = 0.0
            if speeds.max() < params.settle_tolerance:
                break
    return taken


def settle(state: ClothState, template: GarmentTemplate, params: SimParams,
           max_iters: int | None = None) -> ClothState:
    """Integrate until the cloth is at rest (or the iteration cap is hit)."""
    if not np.isfinite(state.positions).all() or not np.isfinite(state.velocities).all():
        raise NumericError("settle called on a non-finite state")
    out = state.copy()
    _substeps(out, template, params,
              max_iters if max_iters is not None else params.max_settle_iters,
              check_tolerance=True)
    return out


def _find_grasp(pos: np.ndarray, pick_world: np.ndarray, radius: float) -> int | None:
    d2 = ((pos[:, :2] - pick_world) ** 2).sum(axis=1)
    near = d2 <= radius * radius
    if not near.any():
        return None
    # topmost vertex within radius emulates single-layer grasping
    z = np.where(near, pos[:, 2], -np.inf)
    return int(np.argmax(z))


def execute_pnp(state: ClothState, action: PnPAction, template: GarmentTemplate,
                params: SimParams, rng: np.random.Generator,
                window: Window | None = None) -> tuple[ClothState, GraspReport]:
    """Settle, grasp the topmost vertex near the pick point, lift, translate,
    release and settle again. Misses (no vertex in reach, or the configured
    miss probability firing) return the settled input state unchanged."""
    window = window or Window()
    if not np.isfinite(state.positions).all():
        raise NumericError("execute_pnp called on a non-finite state")

    # a state whose speeds already satisfy the settle criterion passes through
    # bit-identically, so a miss provably leaves the rendered mask unchanged
    speeds = np.sqrt((state.velocities ** 2).sum(axis=1))
    if speeds.size and speeds.max() < params.settle_tolerance:
        out = state.copy()
    else:
        out = settle(state, template, params)
    out.step_count = state.step_count + 1
    pick_w = window.normalized_to_world(np.asarray(action.pick))
    place_w = window.normalized_to_world(np.asarray(action.place))

    u = rng.random()  # drawn unconditionally to keep the stream aligned
    vertex = _find_grasp(out.positions, pick_w, params.grasp_radius)
    if vertex is None or u < params.miss_probability:
        return out, GraspReport(miss=True, grasped_vertex=None, path_length=0.0)

    # the gripper holds the cloth where it caught it, so the grasped vertex
    # translates by the pick->place offset rather than onto the place point
    start = out.positions[vertex].copy()
    offset = place_w - pick_w
    top = np.array([start[0], start[1], params.lift_height])
    end = np.array([start[0] + offset[0], start[1] + offset[1], params.lift_height])
    down = np.array([end[0], end[1], 0.0])           # lower before opening
    step_len = params.drag_speed * params.dt

    path_length = 0.0
    for a, b in ((start, top), (top, end), (end, down)):
        dist = float(np.linalg.norm(b - a))
        path_length += dist
        n_steps = max(int(np.ceil(dist / step_len)), 1)

        def path(i, a=a, b=b, n=n_steps):
            return a + (b - a) * min((i + 1) / n, 1.0)

        _substeps(out, template, params, n_steps, pinned=vertex, pin_path=path)

    out.velocities[vertex] = 0.0  # gripper stops before opening
    out = settle(out, template, params)
    out.step_count = state.step_count + 1
    return out, GraspReport(miss=False, grasped_vertex=vertex, path_length=path_length)


def drag_vertex(state: ClothState, vertex: int, target_xy, template: GarmentTemplate,
                params: SimParams, lift: float | None = None,
                settle_cap: int | None = None) -> ClothState:
    """Internal pick-lift-drop of a known vertex (used by the crumpler)."""
    out = state.copy()
    lift = params.lift_height if lift is None else lift
    start = out.positions[vertex].copy()
    top = np.array([start[0], start[1], lift])
    end = np.array([target_xy[0], target_xy[1], lift])
    step_len = params.drag_speed * params.dt
    for a, b in ((start, top), (top, end)):
        dist = float(np.linalg.norm(b - a))
        n_steps = max(int(np.ceil(dist / step_len)), 1)

        def path(i, a=a, b=b, n=n_steps):
            return a + (b - a) * min((i + 1) / n, 1.0)

        _substeps(out, template, params, n_steps, pinned=vertex, pin_path=path)
    out.velocities[vertex] = 0.0
    return settle(out, template, params, max_iters=settle_cap)


def crumple(template: GarmentTemplate, seed: int, difficulty: float,
            params: SimParams | None = None, window: Window | None = None) -> ClothState:
    """Crumpled initial state: ceil(8 * difficulty) random pick-lift-drop moves
    from the flattened layout, then a full settle. Deterministic per seed."""
    params = params or SimParams()
    window = window or Window()
    state = rest_state(template, window)
    if difficulty <= 0.0:
        return settle(state, template, params)

    rng = np.random.default_rng(seed)
    n_moves = int(np.ceil(8.0 * difficulty))
    span = template.rest_positions.max(axis=0) - template.rest_positions.min(axis=0)
    drop_limit = 0.35 * window.side
    center = np.asarray(window.center)
    for _ in range(n_moves):
        vertex = int(rng.integers(template.vertex_count))
        centroid = state.positions[:, :2].mean(axis=0)
        radius = rng.uniform(0.05, 0.22) * float(span.max())
        angle = rng.uniform(0.0, 2.0 * np.pi)
        target = centroid + radius * np.array([np.cos(angle), np.sin(angle)])
        target = np.clip(target, center - drop_limit, center + drop_limit)
        state = drag_vertex(state, vertex, target, template, params,
                            lift=0.6 * params.lift_height, settle_cap=600)
    return settle(state, template, params)


def save_state(state: ClothState, path) -> None:
    np.savez(path, positions=state.positions, velocities=state.velocities,
             template_id=state.template_id, step_count=state.step_count)


def load_state(path) -> ClothState:
    data = np.load(path, allow_pickle=False)
    return ClothState(np.asarray(data["positions"], dtype=np.float64),
                      np.asarray(data["velocities"], dtype=np.float64),
                      str(data["template_id"]), int(data["step_count"]))


def mesh_energy(state: ClothState, template: GarmentTemplate, params: SimParams) -> float:
    """Kinetic + elastic + gravitational energy (J), for the settle audit."""
    m_v = params.cloth_mass / template.vertex_count
    kinetic = 0.5 * m_v * float((state.velocities ** 2).sum())
    d = state.positions[template.spring_edges[:, 1]] - state.positions[template.spring_edges[:, 0]]
    length = np.sqrt((d * d).sum(axis=1))
    k = _spring_constants(template, params)
    elastic = 0.5 * float((k * (length - template.spring_rest) ** 2).sum())
    gravitational = m_v * params.gravity * float(state.positions[:, 2].sum())
    return kinetic + elastic + gravitational


def max_strain(state: ClothState, template: GarmentTemplate) -> float:
    """Largest relative overstretch across springs (the area-conservation
    proxy). Compression is not counted: folds legitimately collapse the
    skip-one springs that span a crease."""
    d = state.positions[template.spring_edges[:, 1]] - state.positions[template.spring_edges[:, 0]]
    length = np.sqrt((d * d).sum(axis=1))
    return float((length / template.spring_rest - 1.0).max())
