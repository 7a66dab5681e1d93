"""Point-to-subspace distance and its inner-product reformulation.

A video is represented by the span of its frame features. Scoring a query
``q`` against a video uses the projector ``S~`` onto that span:

    d^2(q, S) = q'q - Tr(S~ q q') = q'q - <vec(S~), vec(q q')>

so minimising distance over a database is a maximum inner product search
between ``vec(S~)`` and the lifted query ``vec(q q')``. ``vec`` is
column-major throughout.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "DegenerateSubspaceError",
    "FrameMatrix",
    "SubspaceEntry",
    "QueryLift",
    "vec",
    "orthonormal_basis",
    "projector",
    "make_entry",
    "distance_sq",
    "lift_query",
    "vec_score",
    "rank_by_score",
    "exact_search",
]

NEG_CLAMP_TOL = 1e-9


class DegenerateSubspaceError(ValueError):
    """Raised when a frame matrix spans no directions at all."""


@dataclass(frozen=True)
class FrameMatrix:
    video_id: str
    data: np.ndarray  # d x m, one frame per column

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError(f"frame matrix for {self.video_id!r} must be 2-D and non-empty, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError(f"frame matrix for {self.video_id!r} contains non-finite values")
        object.__setattr__(self, "data", data)


@dataclass(frozen=True)
class SubspaceEntry:
    video_id: str
    basis: np.ndarray  # d x rho, orthonormal columns
    projector: np.ndarray = field(repr=False)  # d x d

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    @property
    def rank(self) -> int:
        return self.basis.shape[1]


@dataclass(frozen=True)
class QueryLift:
    query_id: str
    raw: np.ndarray  # length d
    lifted: np.ndarray  # length d*d, vec(q q')


def vec(mat: np.ndarray) -> np.ndarray:
    """Column-major vectorisation of a matrix."""
    return np.asarray(mat).reshape(-1, order="F")


def orthonormal_basis(frames, rel_tol: float = 1e-6, rank: int | None = None) -> np.ndarray:
    """Orthonormal basis of the column span of ``frames``.

    Singular directions with ``sigma_i > rel_tol * sigma_max`` are kept. If
    ``rank`` is given, at most that many leading directions are kept.
    """
    data = frames.data if isinstance(frames, FrameMatrix) else np.asarray(frames, dtype=np.float64)
    if data.ndim == 1:
        data = data[:, None]
    if not np.all(np.isfinite(data)):
        raise ValueError("frames contain non-finite values")
    if not 0.0 < rel_tol < 1.0:
        raise ValueError(f"rel_tol must lie in (0, 1), got {rel_tol}")
    if rank is not None and rank < 1:
        raise ValueError(f"rank must be >= 1, got {rank}")

    left, sing, _ = np.linalg.svd(data, full_matrices=False)
    if sing.size == 0 or sing[0] == 0.0:
        raise DegenerateSubspaceError("degenerate subspace: frame matrix is all zeros")
    keep = int(np.count_nonzero(sing > rel_tol * sing[0]))
    if rank is not None:
        keep = min(keep, rank)
    return np.ascontiguousarray(left[:, :keep])


def projector(basis: np.ndarray) -> np.ndarray:
    """Orthogonal projector ``B B'`` onto the span of an orthonormal basis."""
    basis = np.asarray(basis, dtype=np.float64)
    proj = basis @ basis.T
    # exact symmetry; the product is symmetric only up to rounding
    return 0.5 * (proj + proj.T)


def make_entry(video_id: str, frames, rel_tol: float = 1e-6, rank: int | None = None) -> SubspaceEntry:
    basis = orthonormal_basis(frames, rel_tol=rel_tol, rank=rank)
    return SubspaceEntry(video_id, basis, projector(basis))


def _as_query(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(q)):
        raise ValueError("query contains non-finite values")
    return q


def distance_sq(q, proj: np.ndarray) -> float:
    """Squared distance from ``q`` to the subspace with projector ``proj``."""
    q = _as_query(q)
    proj = np.asarray(proj, dtype=np.float64)
    if proj.shape != (q.size, q.size):
        raise ValueError(f"dimension mismatch: query has d={q.size}, projector is {proj.shape}")
    value = float(q @ q - np.trace(proj @ np.outer(q, q)))
    if value < 0.0:
        if value < -NEG_CLAMP_TOL * (1.0 + float(q @ q)):
            raise ArithmeticError(f"negative squared distance {value}; projector is not a valid projector")
        value = 0.0
    return value


def lift_query(q, query_id: str = "") -> QueryLift:
    q = _as_query(q)
    return QueryLift(query_id, q, vec(np.outer(q, q)))


def vec_score(subspace: SubspaceEntry, lift: QueryLift) -> float:
    """Inner product <vec(S~), vec(q q')>, i.e. Tr(S~ q q')."""
    flat = vec(subspace.projector)
    if flat.size != lift.lifted.size:
        raise ValueError(f"dimension mismatch: subspace d={subspace.dim}, query d={lift.raw.size}")
    return float(np.sum(flat * lift.lifted))


def rank_by_score(ids: Sequence[str], scores, k: int | None = None) -> list[tuple[str, float]]:
    """Sort by descending score, ties by ascending id, and keep the top ``k``."""
    scores = np.asarray(scores)
    order = sorted(range(len(ids)), key=lambda i: (-scores[i], ids[i]))
    if k is not None:
        order = order[:k]
    return [(ids[i], scores[i].item()) for i in order]


def exact_search(lift: QueryLift, database: Sequence[SubspaceEntry], k: int | None = None) -> list[tuple[str, float]]:
    """Rank every video by Tr(S~ q q'), best first."""
    if not database:
        raise ValueError("empty database")
    if k is not None and not 1 <= k <= len(database):
        raise ValueError(f"k must lie in [1, {len(database)}], got {k}")
    d = lift.raw.size
    for entry in database:
        if entry.dim != d:
            raise ValueError(f"dimension mismatch: video {entry.video_id!r} has d={entry.dim}, query has d={d}")
    flat = np.stack([vec(entry.projector) for entry in database])
    # row-wise sums rather than a matrix-vector product: the result for a
    # row then depends only on its contents, so equal subspaces tie exactly
    scores = np.sum(flat * lift.lifted, axis=1)
    return rank_by_score([entry.video_id for entry in database], scores, k)
