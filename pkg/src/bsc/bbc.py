"""Bilinear Binary Coding (BBC).

Each datum is a d x d matrix: a video's projector ``S~`` or an image's
outer product ``x x'``. Codes are ``sgn(R1' X R2)`` with orthonormal
``R1`` (d x c1) and ``R2`` (d x c2), giving c = c1 * c2 bits. Videos use
``(P1, P2)`` and images ``(Q1, Q2)``. Training maximises

    sum_i <B_i^U, Q1' U_i Q2> + sum_j <B_j^V, P1' V_j P2>
        + mu / sqrt(c) * sum_ij delta_ij <B_j^V, B_i^U>

by block coordinate ascent; every block has a closed-form maximiser (polar
factors for the rotations, signs for the codes), so the objective never
decreases.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ibc import sign
from .subspace import SubspaceEntry

__all__ = [
    "PrepStats",
    "BbcTrainingSet",
    "BbcModel",
    "preprocess",
    "apply_stats",
    "build_delta",
    "bilinear_encode",
    "polar_P1",
    "polar_P2",
    "update_P1",
    "update_P2",
    "update_code_V",
    "update_codes",
    "objective",
    "train_bbc",
    "encode_video_bbc",
    "encode_image_bbc",
    "encode_videos_bbc",
    "encode_images_bbc",
    "flatten_codes",
]

ZERO_TOL = 1e-12
ROTATION_TOL = 1e-10


@dataclass(frozen=True)
class PrepStats:
    mean: np.ndarray  # d x d
    norms: np.ndarray  # per item, after centering
    zero: np.ndarray  # bool per item


def preprocess(mats) -> tuple[np.ndarray, PrepStats]:
    """Subtract the mean matrix and scale every item to unit Frobenius norm.

    Items that are zero after centering stay zero and are flagged.
    """
    mats = np.asarray(mats, dtype=np.float64)
    if mats.ndim != 3 or len(mats) == 0:
        raise ValueError(f"expected a non-empty (N, d, d) stack, got shape {mats.shape}")
    mean = mats.mean(axis=0)
    centered = mats - mean
    norms = np.sqrt(np.einsum("nij,nij->n", centered, centered))
    scale = max(1.0, float(np.sqrt(np.einsum("nij,nij->n", mats, mats)).max()))
    zero = norms <= ZERO_TOL * scale
    safe = np.where(zero, 1.0, norms)
    out = centered / safe[:, None, None]
    out[zero] = 0.0
    return out, PrepStats(mean, norms, zero)


def apply_stats(mats, mean: np.ndarray) -> np.ndarray:
    """Query-time preprocessing with a stored training mean."""
    mats = np.asarray(mats, dtype=np.float64)
    centered = mats - mean
    norms = np.sqrt(np.einsum("nij,nij->n", centered, centered))
    scale = np.maximum(1.0, np.sqrt(np.einsum("nij,nij->n", mats, mats)))
    zero = norms <= ZERO_TOL * scale
    out = centered / np.where(zero, 1.0, norms)[:, None, None]
    out[zero] = 0.0
    return out


def build_delta(image_labels: Sequence, video_labels: Sequence) -> np.ndarray:
    """``delta[i, j] = 1`` iff image i and video j carry the same label."""
    img = np.asarray(image_labels, dtype=object)
    vid = np.asarray(video_labels, dtype=object)
    return (img[:, None] == vid[None, :]).astype(np.float64)


@dataclass(frozen=True)
class BbcTrainingSet:
    V_mats: np.ndarray  # (k, d, d) preprocessed video matrices
    U_mats: np.ndarray  # (n, d, d) preprocessed image matrices
    delta: np.ndarray  # (n, k) in {0, 1}
    center_V: np.ndarray | None = None
    center_U: np.ndarray | None = None

    def __post_init__(self):
        V = np.asarray(self.V_mats, dtype=np.float64)
        U = np.asarray(self.U_mats, dtype=np.float64)
        delta = np.asarray(self.delta, dtype=np.float64)
        if V.ndim != 3 or U.ndim != 3 or V.shape[1:] != U.shape[1:] or V.shape[1] != V.shape[2]:
            raise ValueError(f"video stack {V.shape} and image stack {U.shape} must both be (N, d, d)")
        if delta.shape != (len(U), len(V)):
            raise ValueError(f"delta must be {len(U)}x{len(V)}, got {delta.shape}")
        if not np.all((delta == 0) | (delta == 1)):
            raise ValueError("delta entries must be 0 or 1")
        d = V.shape[1]
        object.__setattr__(self, "V_mats", V)
        object.__setattr__(self, "U_mats", U)
        object.__setattr__(self, "delta", delta)
        if self.center_V is None:
            object.__setattr__(self, "center_V", np.zeros((d, d)))
        if self.center_U is None:
            object.__setattr__(self, "center_U", np.zeros((d, d)))

    @classmethod
    def from_data(cls, projectors, images, delta) -> "BbcTrainingSet":
        """Preprocess raw projectors (k, d, d) and image vectors (n, d)."""
        images = np.atleast_2d(np.asarray(images, dtype=np.float64))
        outer = np.einsum("ni,nj->nij", images, images)
        V, v_stats = preprocess(projectors)
        U, u_stats = preprocess(outer)
        return cls(V, U, delta, v_stats.mean, u_stats.mean)

    @property
    def d(self) -> int:
        return self.V_mats.shape[1]


@dataclass(frozen=True)
class BbcModel:
    P1: np.ndarray
    P2: np.ndarray
    Q1: np.ndarray
    Q2: np.ndarray
    mu: float
    center_V: np.ndarray
    center_U: np.ndarray
    params: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.P1.shape[0]

    @property
    def c1(self) -> int:
        return self.P1.shape[1]

    @property
    def c2(self) -> int:
        return self.P2.shape[1]

    @property
    def r(self) -> int:
        return self.c1 * self.c2


def bilinear_encode(R1: np.ndarray, R2: np.ndarray, X: np.ndarray) -> np.ndarray:
    """``sgn(R1' X R2)`` as a c1 x c2 int8 matrix; sgn(0) = +1."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape != (R1.shape[0], R2.shape[0]):
        raise ValueError(f"shape mismatch: R1 {R1.shape}, X {X.shape}, R2 {R2.shape}")
    return sign(R1.T @ X @ R2)


def _bilinear_many(R1, R2, X):
    return np.einsum("ia,nij,jb->nab", R1, X, R2, optimize=True)


def flatten_codes(codes: np.ndarray) -> np.ndarray:
    """Column-major flattening of a stack of c1 x c2 codes to (N, c)."""
    codes = np.asarray(codes)
    return codes.transpose(0, 2, 1).reshape(len(codes), -1)


def polar_P1(D1: np.ndarray) -> np.ndarray:
    """Orthonormal d x c1 maximiser of ``Tr(D1 P)`` for D1 of shape c1 x d."""
    Z, _, Yt = np.linalg.svd(D1, full_matrices=False)
    return Yt.T @ Z.T


def polar_P2(D2: np.ndarray) -> np.ndarray:
    """Orthonormal d x c2 maximiser of ``Tr(P' D2)`` for D2 of shape d x c2."""
    Z, _, Yt = np.linalg.svd(D2, full_matrices=False)
    return Z @ Yt


def update_P1(mats: np.ndarray, R2: np.ndarray, codes: np.ndarray) -> np.ndarray:
    """Left rotation update; ``D1 = sum_j B_j R2' X_j'``."""
    D1 = np.einsum("nab,jb,nij->ai", codes.astype(np.float64), R2, mats, optimize=True)
    return polar_P1(D1)


def update_P2(mats: np.ndarray, R1: np.ndarray, codes: np.ndarray) -> np.ndarray:
    """Right rotation update; ``D2 = sum_j X_j' R1 B_j``."""
    D2 = np.einsum("nij,ia,nab->jb", mats, R1, codes.astype(np.float64), optimize=True)
    return polar_P2(D2)


def update_code_V(R1: np.ndarray, R2: np.ndarray, X: np.ndarray, other_codes, weights, mu: float) -> np.ndarray:
    """Exact sign maximiser of ``Tr(B D3)`` for one item.

    ``D3' = R1' X R2 + mu / sqrt(c) * sum_i w_i B_i`` where ``B_i`` are the
    opposite-side codes and ``w_i`` the corresponding delta entries.
    """
    other_codes = np.asarray(other_codes, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    c1, c2 = R1.shape[1], R2.shape[1]
    if other_codes.ndim != 3 or other_codes.shape[1:] != (c1, c2) or len(weights) != len(other_codes):
        raise ValueError(f"shape mismatch: codes {other_codes.shape}, weights {weights.shape}, expected (*, {c1}, {c2})")
    if X.shape != (R1.shape[0], R2.shape[0]):
        raise ValueError(f"shape mismatch: X {X.shape}")
    pull = np.tensordot(weights, other_codes, axes=1)
    return sign(R1.T @ X @ R2 + mu / np.sqrt(c1 * c2) * pull)


def update_codes(R1, R2, mats, other_codes, delta, mu: float) -> np.ndarray:
    """All code updates of one side at once.

    ``delta`` is indexed (item, other item); items only read the fixed
    opposite-side codes, so updating them jointly equals a sequential sweep.
    """
    c = R1.shape[1] * R2.shape[1]
    pull = np.einsum("no,oab->nab", delta, other_codes.astype(np.float64), optimize=True)
    return sign(_bilinear_many(R1, R2, mats) + mu / np.sqrt(c) * pull)


def _objective(P1, P2, Q1, Q2, mu, train: BbcTrainingSet, codes_U, codes_V) -> float:
    c = P1.shape[1] * P2.shape[1]
    img = float(np.sum(codes_U * _bilinear_many(Q1, Q2, train.U_mats)))
    vid = float(np.sum(codes_V * _bilinear_many(P1, P2, train.V_mats)))
    inner = flatten_codes(codes_U).astype(np.float64) @ flatten_codes(codes_V).astype(np.float64).T
    cross = float(np.sum(train.delta * inner))
    return img + vid + mu / np.sqrt(c) * cross


def objective(model: BbcModel, train: BbcTrainingSet, codes_U, codes_V) -> float:
    """Training objective for the given rotations and codes."""
    codes_U = np.asarray(codes_U)
    codes_V = np.asarray(codes_V)
    if codes_U.shape != (len(train.U_mats), model.c1, model.c2) or codes_V.shape != (len(train.V_mats), model.c1, model.c2):
        raise ValueError(f"code shapes {codes_U.shape}, {codes_V.shape} do not match model and training set")
    return _objective(model.P1, model.P2, model.Q1, model.Q2, model.mu, train, codes_U, codes_V)


def _random_orthonormal(rng, d, c):
    q, r = np.linalg.qr(rng.standard_normal((d, c)))
    return q * np.where(np.diag(r) < 0, -1.0, 1.0)


def train_bbc(
    train: BbcTrainingSet,
    c1: int,
    c2: int,
    mu: float = 1.0,
    iters: int = 10,
    seed: int = 0,
    history: list | None = None,
) -> BbcModel:
    """Block coordinate ascent over rotations and codes.

    One sweep updates P1, P2, the video codes, Q1, Q2 and the image codes,
    in that order. Training stops after ``iters`` sweeps or once a sweep
    flips no code and moves no rotation by more than 1e-10. If ``history``
    is a list, ``(sweep, block, objective)`` is appended after the
    initialisation and after every block.
    """
    d = train.d
    if not (1 <= c1 <= d and 1 <= c2 <= d):
        raise ValueError(f"c1={c1}, c2={c2} must lie in [1, d={d}]")
    if mu < 0:
        raise ValueError(f"mu must be non-negative, got {mu}")
    if iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")

    rng = np.random.default_rng(seed)
    # one random rotation pair shared by both sides, so the initial image
    # and video codes are expressed in the same frame
    P1 = Q1 = _random_orthonormal(rng, d, c1)
    P2 = Q2 = _random_orthonormal(rng, d, c2)
    V, U, delta = train.V_mats, train.U_mats, train.delta
    BV = sign(_bilinear_many(P1, P2, V))
    BU = sign(_bilinear_many(Q1, Q2, U))

    def record(sweep, block):
        if history is not None:
            history.append((sweep, block, _objective(P1, P2, Q1, Q2, mu, train, BU, BV)))

    record(0, "init")
    sweeps = 0
    for sweep in range(1, iters + 1):
        sweeps = sweep
        old = (P1, P2, Q1, Q2)
        P1 = update_P1(V, P2, BV)
        record(sweep, "P1")
        P2 = update_P2(V, P1, BV)
        record(sweep, "P2")
        new_BV = update_codes(P1, P2, V, BU, delta.T, mu)
        flips = int(np.count_nonzero(new_BV != BV))
        BV = new_BV
        record(sweep, "B_V")
        Q1 = update_P1(U, Q2, BU)
        record(sweep, "Q1")
        Q2 = update_P2(U, Q1, BU)
        record(sweep, "Q2")
        new_BU = update_codes(Q1, Q2, U, BV, delta, mu)
        flips += int(np.count_nonzero(new_BU != BU))
        BU = new_BU
        record(sweep, "B_U")
        moved = max(float(np.linalg.norm(a - b)) for a, b in zip(old, (P1, P2, Q1, Q2)))
        if flips == 0 and moved <= ROTATION_TOL:
            break

    params = {"iters": iters, "seed": seed, "sweeps": sweeps}
    return BbcModel(P1, P2, Q1, Q2, float(mu), train.center_V.copy(), train.center_U.copy(), params)


def encode_videos_bbc(model: BbcModel, projectors) -> np.ndarray:
    """Codes (k, c1, c2) for a stack of projectors (k, d, d)."""
    projectors = np.asarray(projectors, dtype=np.float64)
    if projectors.ndim != 3 or projectors.shape[1:] != (model.d, model.d):
        raise ValueError(f"expected projectors of shape (k, {model.d}, {model.d}), got {projectors.shape}")
    return sign(_bilinear_many(model.P1, model.P2, apply_stats(projectors, model.center_V)))


def encode_images_bbc(model: BbcModel, queries) -> np.ndarray:
    """Codes (n, c1, c2) for query vectors stacked as rows (n, d)."""
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if queries.shape[1] != model.d:
        raise ValueError(f"expected queries of dimension {model.d}, got {queries.shape[1]}")
    outer = np.einsum("ni,nj->nij", queries, queries)
    return sign(_bilinear_many(model.Q1, model.Q2, apply_stats(outer, model.center_U)))


def encode_video_bbc(model: BbcModel, subspace: SubspaceEntry) -> np.ndarray:
    return encode_videos_bbc(model, subspace.projector[None])[0]


def encode_image_bbc(model: BbcModel, q) -> np.ndarray:
    return encode_images_bbc(model, np.asarray(q, dtype=np.float64).reshape(1, -1))[0]
