"""Binary subspace coding for query-by-image video retrieval."""

from .errors import DataError, NumericalError
from .subspace import (
    SubspaceEntry,
    QueryLift,
    distance_sq,
    exact_search,
    lift_query,
    make_entry,
    orthonormal_basis,
    projector,
    vec_score,
)

__version__ = "0.1.0"
