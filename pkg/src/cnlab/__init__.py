"""Numerical verification of Chen-Nagano gauge identities on discretized Riemannian models."""

from .errors import (
    CnlabError,
    ConfigurationError,
    ConstructionError,
    ConvergenceError,
    DomainError,
    PreconditionError,
    UnsupportedBackendError,
)
from .geometry import (
    ChartKind,
    ChartSpec,
    ManifoldContext,
    TensorField,
    Valence,
    convention_pin,
    curvature,
    make_model,
    second_kind_apply,
    second_kind_spectrum,
)
from .operators import OperatorId, OperatorName, apply_operator

__version__ = "0.1.0"

__all__ = [
    "ChartKind",
    "ChartSpec",
    "CnlabError",
    "ConfigurationError",
    "ConstructionError",
    "ConvergenceError",
    "DomainError",
    "ManifoldContext",
    "OperatorId",
    "OperatorName",
    "PreconditionError",
    "TensorField",
    "UnsupportedBackendError",
    "Valence",
    "apply_operator",
    "convention_pin",
    "curvature",
    "make_model",
    "second_kind_apply",
    "second_kind_spectrum",
]
