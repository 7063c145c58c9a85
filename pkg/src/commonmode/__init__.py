"""Common Mode Patterns: supervised tensor subspace learning for binary problems."""

__version__ = "0.1.0"

from .classify import EvalReport, NearestCentroidTensor, Rank1TensorClassifier, evaluate  # noqa: E402
from .subspace import (  # noqa: E402
    CMP,
    MPCA,
    CmpModel,
    FitOptions,
    MpcaModel,
    ProjectionBasis,
    fit_cmp,
    fit_mpca,
    normalize,
    project,
)

__all__ = [
    "CMP",
    "MPCA",
    "CmpModel",
    "EvalReport",
    "FitOptions",
    "MpcaModel",
    "NearestCentroidTensor",
    "ProjectionBasis",
    "Rank1TensorClassifier",
    "evaluate",
    "fit_cmp",
    "fit_mpca",
    "normalize",
    "project",
]
