"""Invertible image Gaussianization with quasi-orthonormal convolutions.

The pipeline alternates channel-wise marginal Gaussianization with learned
quasi-orthonormal convolutions, stacked in strided blocks.  The package
exposes the transform, its inverse, per-layer multi-information reduction
reporting, and inversion-based texture synthesis, plus a CLI (``convrbig``).
"""

from .convops import (
    ConvFilter,
    conv_forward,
    conv_transpose,
    delta_filter,
    filter_as_matrix,
    space_to_depth_filter,
)
from .infometrics import MiReport, accumulated_mi_curve, delta_mi_layer, entropy_univariate
from .marginal import MarginalMap, fit_marginal, marginal_forward, marginal_inverse
from .model import ArchitectureSpec, BlockSpec, RbigLayer, RbigModel, load_model, save_model, train_model
from .ortho import (
    TrainConfig,
    TrainReport,
    loss_and_grad,
    orthonormality_residual,
    random_orthonormal_filter,
    train_filter,
)
from .synthesis import NoiseSpec, probe_direction, synthesize

__all__ = [
    "ArchitectureSpec",
    "BlockSpec",
    "ConvFilter",
    "MarginalMap",
    "MiReport",
    "NoiseSpec",
    "RbigLayer",
    "RbigModel",
    "TrainConfig",
    "TrainReport",
    "accumulated_mi_curve",
    "conv_forward",
    "conv_transpose",
    "delta_filter",
    "delta_mi_layer",
    "entropy_univariate",
    "filter_as_matrix",
    "fit_marginal",
    "load_model",
    "loss_and_grad",
    "marginal_forward",
    "marginal_inverse",
    "orthonormality_residual",
    "probe_direction",
    "random_orthonormal_filter",
    "save_model",
    "space_to_depth_filter",
    "synthesize",
    "train_filter",
    "train_model",
]

__version__ = "0.1.0"
