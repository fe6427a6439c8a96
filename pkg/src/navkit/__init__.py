"""navkit: an on-manifold state estimation toolkit.

States live on vector spaces, matrix Lie groups or products of both, and
expose generalized plus/minus operators with a selectable perturbation
convention. On top of that one abstraction the package provides Kalman-type
filters (EKF, iterated EKF, invariant EKF, sigma-point variants), an
interacting multiple model filter, batch MAP smoothing, input
preintegration and estimator consistency evaluation, all of which run
unchanged on any state implementation.
"""

from . import batch, evaluation, filters, liegroups, models, numdiff, preintegration
from .exceptions import (
    ConfigurationError,
    ContractViolationError,
    SingularInnovationError,
    UnsupportedSchemeError,
)
from .liegroups import GroupElement, GroupKind, TangentVector
from .states import (
    GaussianBelief,
    ManifoldPoint,
    Side,
    belief_check,
    composite_state,
    group_state,
    ominus,
    oplus,
    vector_state,
)

__version__ = "0.1.0"

__all__ = [
    "batch",
    "evaluation",
    "filters",
    "liegroups",
    "models",
    "numdiff",
    "preintegration",
    "GroupKind",
    "GroupElement",
    "TangentVector",
    "ManifoldPoint",
    "GaussianBelief",
    "Side",
    "vector_state",
    "group_state",
    "composite_state",
    "oplus",
    "ominus",
    "belief_check",
    "ContractViolationError",
    "UnsupportedSchemeError",
    "SingularInnovationError",
    "ConfigurationError",
]
