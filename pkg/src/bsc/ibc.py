"""Inner-product Binary Coding (IBC).

Learns two linear sign hashes, ``f(x) = sgn(P' x)`` for lifted videos
``vec(S~)`` and ``g(z) = sgn(Q' z)`` for lifted images ``vec(x x')``, by
alternately maximising ``Tr(g(U) A f(V)')`` over one side with the other
fixed. Each side is relaxed with auxiliary codes ``B``:

    max_{B, W}  Tr(B A F') - lam * ||B - W' X||_F^2

solved by alternating the closed forms ``B = sgn(F A' + 2 lam W' X)`` and
``W = (X X')^{-1} X B'``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import NumericalError
from .subspace import SubspaceEntry, lift_query, vec

__all__ = [
    "IbcTrainingSet",
    "IbcModel",
    "sign",
    "build_training",
    "correlation",
    "update_B",
    "update_P",
    "surrogate",
    "objective",
    "train_ibc",
    "encode_video_ibc",
    "encode_image_ibc",
    "encode_videos_ibc",
    "encode_images_ibc",
]

RIDGE = 1e-12


def sign(x) -> np.ndarray:
    """Elementwise sign with sgn(0) = +1, as int8."""
    return np.where(np.asarray(x) >= 0, 1, -1).astype(np.int8)


@dataclass(frozen=True)
class IbcTrainingSet:
    U: np.ndarray  # d^2 x n lifted images
    V: np.ndarray  # d^2 x k vectorised projectors
    A: np.ndarray  # n x k image/video correlation

    def __post_init__(self):
        U, V, A = (np.asarray(m, dtype=np.float64) for m in (self.U, self.V, self.A))
        if U.ndim != 2 or V.ndim != 2 or U.shape[0] != V.shape[0]:
            raise ValueError(f"U {U.shape} and V {V.shape} must share their row count")
        if U.shape[1] < 1 or V.shape[1] < 1:
            raise ValueError("training set needs at least one image and one video")
        if A.shape != (U.shape[1], V.shape[1]):
            raise ValueError(f"A must be {U.shape[1]}x{V.shape[1]}, got {A.shape}")
        for name, m in (("U", U), ("V", V), ("A", A)):
            if not np.all(np.isfinite(m)):
                raise ValueError(f"{name} contains non-finite values")
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "A", A)


@dataclass(frozen=True)
class IbcModel:
    P: np.ndarray  # d^2 x r, video side
    Q: np.ndarray  # d^2 x r, image side
    d: int
    lam: float
    params: dict = field(default_factory=dict)

    @property
    def r(self) -> int:
        return self.P.shape[1]


def build_training(subspaces: Sequence[SubspaceEntry], images: Sequence) -> tuple[np.ndarray, np.ndarray]:
    """Stack lifted images into ``U`` (d^2 x n) and vectorised projectors into ``V`` (d^2 x k)."""
    if len(subspaces) == 0:
        raise ValueError("no videos given")
    if len(images) == 0:
        raise ValueError("no images given")
    d = subspaces[0].dim
    for entry in subspaces:
        if entry.dim != d:
            raise ValueError(f"dimension mismatch: video {entry.video_id!r} has d={entry.dim}, expected {d}")
    lifted = []
    for i, x in enumerate(images):
        lift = lift_query(x)
        if lift.raw.size != d:
            raise ValueError(f"dimension mismatch: image {i} has d={lift.raw.size}, expected {d}")
        lifted.append(lift.lifted)
    U = np.stack(lifted, axis=1)
    V = np.stack([vec(entry.projector) for entry in subspaces], axis=1)
    return U, V


def correlation(U: np.ndarray, V: np.ndarray, mode: str = "raw", m: int | None = None) -> np.ndarray:
    """Image/video correlation ``U'V``, optionally binarised per video column.

    With ``mode="top_m"`` the ``m`` largest entries of each column become 1
    and the rest 0; ties at the cutoff go to the lower row index.
    """
    if U.shape[0] != V.shape[0]:
        raise ValueError(f"U {U.shape} and V {V.shape} must share their row count")
    raw = U.T @ V
    if mode == "raw":
        return raw
    if mode != "top_m":
        raise ValueError(f"unknown correlation mode {mode!r}")
    n = raw.shape[0]
    if m is None or not 1 <= m <= n:
        raise ValueError(f"top_m needs 1 <= m <= {n}, got {m}")
    order = np.argsort(-raw, axis=0, kind="stable")[:m]
    out = np.zeros_like(raw)
    np.put_along_axis(out, order, 1.0, axis=0)
    return out


def update_B(f_V: np.ndarray, A: np.ndarray, P: np.ndarray, U: np.ndarray, lam: float) -> np.ndarray:
    """Exact sign-matrix maximiser of ``Tr(B A f_V') - lam ||B - P'U||^2``.

    ``f_V`` holds the fixed codes of the other side (r x k), ``A`` is n x k
    and ``P``/``U`` are the projection and data of the side being updated.
    """
    f_V = np.asarray(f_V, dtype=np.float64)
    if f_V.shape[1] != A.shape[1] or P.shape[0] != U.shape[0] or U.shape[1] != A.shape[0] or P.shape[1] != f_V.shape[0]:
        raise ValueError(f"shape mismatch: f_V {f_V.shape}, A {A.shape}, P {P.shape}, U {U.shape}")
    return sign(f_V @ A.T + 2.0 * lam * (P.T @ U))


def update_P(U: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Ridge-regularised least squares ``argmin_P ||B - P'U||_F^2``.

    The ridge is ``1e-12 * trace(U U') / rows(U)``; the smaller of the primal
    and dual normal equations is solved.
    """
    U = np.asarray(U, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    D, n = U.shape
    if B.shape[1] != n:
        raise ValueError(f"shape mismatch: U {U.shape}, B {B.shape}")
    energy = float(np.sum(U * U))
    if energy == 0.0:
        return np.zeros((D, B.shape[0]))
    eps = RIDGE * energy / D
    try:
        if n < D:
            gram = U.T @ U
            gram[np.diag_indices_from(gram)] += eps
            P = U @ np.linalg.solve(gram, B.T)
        else:
            gram = U @ U.T
            gram[np.diag_indices_from(gram)] += eps
            P = np.linalg.solve(gram, U @ B.T)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"normal equations could not be solved: {exc}") from exc
    if not np.all(np.isfinite(P)):
        raise NumericalError("least-squares projection is not finite")
    return P


def surrogate(B, A, F, P, U, lam: float) -> float:
    """Relaxed per-side objective ``Tr(B A F') - lam ||B - P'U||_F^2``."""
    resid = np.asarray(B, dtype=np.float64) - P.T @ U
    return float(np.sum((np.asarray(F, dtype=np.float64) @ A.T) * B) - lam * np.sum(resid * resid))


def objective(g_U, A, f_V) -> float:
    """``Tr(g(U) A f(V)')``."""
    return float(np.sum((np.asarray(g_U, dtype=np.float64) @ A) * np.asarray(f_V, dtype=np.float64)))


def _fit_side(X, F, A_side, W, lam, inner_iters, history, side):
    B = None
    for t in range(inner_iters):
        B = update_B(F, A_side, W, X, lam)
        if history is not None:
            history.append((side, t, "B", surrogate(B, A_side, F, W, X, lam)))
        W = update_P(X, B)
        if history is not None:
            history.append((side, t, "P", surrogate(B, A_side, F, W, X, lam)))
    return W


def train_ibc(
    train: IbcTrainingSet,
    r: int,
    lam: float = 100.0,
    outer_iters: int = 10,
    inner_iters: int = 2,
    seed: int = 0,
    history: list | None = None,
) -> IbcModel:
    """Alternate image-side and video-side updates for ``outer_iters`` rounds.

    Initial codes are signs of seeded standard-normal projections (image
    side drawn first). The fitted projections start at zero, so the first
    code update on each side is driven by the correlation term alone.

    If ``history`` is a list, surrogate values after every B and P step
    are appended as ``(side, pass, step, value)`` tuples, followed by
    ``("objective", "init"|"final", value)`` entries.
    """
    if r < 1:
        raise ValueError(f"code length must be >= 1, got {r}")
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    if outer_iters < 1 or inner_iters < 1:
        raise ValueError("iteration counts must be >= 1")
    U, V, A = train.U, train.V, train.A
    D = U.shape[0]
    d = int(round(np.sqrt(D)))
    if d * d != D:
        raise ValueError(f"lifted dimension {D} is not a perfect square")

    rng = np.random.default_rng(seed)
    Q0 = rng.standard_normal((D, r))
    P0 = rng.standard_normal((D, r))
    g_U = sign(Q0.T @ U)
    f_V = sign(P0.T @ V)
    if history is not None:
        history.append(("objective", "init", objective(g_U, A, f_V)))

    Q = np.zeros((D, r))
    P = np.zeros((D, r))
    for _ in range(outer_iters):
        Q = _fit_side(U, f_V, A, Q, lam, inner_iters, history, "image")
        g_U = sign(Q.T @ U)
        P = _fit_side(V, g_U, A.T, P, lam, inner_iters, history, "video")
        f_V = sign(P.T @ V)

    if history is not None:
        history.append(("objective", "final", objective(g_U, A, f_V)))
    params = {"outer_iters": outer_iters, "inner_iters": inner_iters, "seed": seed}
    return IbcModel(P=P, Q=Q, d=d, lam=float(lam), params=params)


def encode_videos_ibc(model: IbcModel, projectors: np.ndarray) -> np.ndarray:
    """Codes (k x r) for a stack of projectors shaped (k, d, d)."""
    projectors = np.asarray(projectors, dtype=np.float64)
    if projectors.ndim != 3 or projectors.shape[1:] != (model.d, model.d):
        raise ValueError(f"expected projectors of shape (k, {model.d}, {model.d}), got {projectors.shape}")
    flat = projectors.transpose(0, 2, 1).reshape(len(projectors), -1)  # column-major vec per item
    return sign(flat @ model.P)


def encode_images_ibc(model: IbcModel, queries: np.ndarray) -> np.ndarray:
    """Codes (n x r) for query vectors stacked as rows (n, d)."""
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if queries.shape[1] != model.d:
        raise ValueError(f"expected queries of dimension {model.d}, got {queries.shape[1]}")
    lifted = np.einsum("ni,nj->nji", queries, queries).reshape(len(queries), -1)
    return sign(lifted @ model.Q)


def encode_video_ibc(model: IbcModel, subspace: SubspaceEntry) -> np.ndarray:
    return encode_videos_ibc(model, subspace.projector[None])[0]


def encode_image_ibc(model: IbcModel, q) -> np.ndarray:
    return encode_images_ibc(model, np.asarray(q, dtype=np.float64).reshape(1, -1))[0]
