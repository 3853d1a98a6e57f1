from . import core
from .checkpoint import load_params, save_params
from .core import (
    Tape,
    Tensor,
    activation,
    as_tensor,
    bernoulli_nll,
    gaussian_nll,
    kl_diag_gaussians,
    kl_diag_gaussians_per_row,
)
from .gradcheck import finite_diff_check, run_gradient_audit
from .layers import ParamStore, affine, gaussian_head, gru_cell
from .optim import adam_update, clip_grad_norm

__all__ = [
    "Tape", "Tensor", "ParamStore", "core",
    "activation", "affine", "gaussian_head", "gru_cell", "as_tensor",
    "bernoulli_nll", "gaussian_nll", "kl_diag_gaussians", "kl_diag_gaussians_per_row",
    "adam_update", "clip_grad_norm", "finite_diff_check", "run_gradient_audit",
    "save_params", "load_params",
]
