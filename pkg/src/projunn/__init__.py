"""Rank-k unitary/orthogonal updates, unitary RNNs and Fourier-domain unitary convolutions."""
from .errors import (
    ConfigError,
    CorruptFileError,
    CorruptSymmetryError,
    InvalidArgumentError,
    InvalidStateError,
    NumericFailureError,
    ProjunnError,
    SingularMatrixError,
    StepFailureError,
    StepTooLargeError,
)
from .lowrank import LowRankFactor, RankProfile, column_sample, lsi_sample, rank_profile, sample_gradient
from .manifold import (
    InitScheme,
    UnitaryParameter,
    UpdateMode,
    init_parameter,
    load_parameter,
    reproject,
    save_parameter,
    tangent_project,
    update,
    update_direct,
    update_tangent,
)
from .numerics import expm_dense, gram_schmidt, herm_eig_small, polar_project_dense, unitarity_error

__version__ = "0.1.0"
