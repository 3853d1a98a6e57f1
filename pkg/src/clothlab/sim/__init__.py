from .engine import (
    ClothState,
    GraspReport,
    PnPAction,
    SimParams,
    Window,
    crumple,
    drag_vertex,
    execute_pnp,
    load_state,
    max_strain,
    mesh_energy,
    rest_state,
    save_state,
    settle,
)
from .render import RENDER_RESOLUTIONS, render_flat_goal, render_mask
from .templates import (
    BEND,
    GARMENT_NAMES,
    SHEAR,
    STRUCTURAL,
    GarmentTemplate,
    builtin_outline_dir,
    default_resolution,
    load_template,
)

__all__ = [
    "ClothState", "GraspReport", "PnPAction", "SimParams", "Window",
    "crumple", "drag_vertex", "execute_pnp", "max_strain", "mesh_energy",
    "rest_state", "settle", "render_mask", "render_flat_goal",
    "RENDER_RESOLUTIONS", "GarmentTemplate", "load_template", "default_resolution",
    "builtin_outline_dir", "GARMENT_NAMES", "STRUCTURAL", "SHEAR", "BEND",
]
