"""On-disk formats. Byte layouts are documented in FORMATS.md.

All numeric payloads are little-endian float64, matrices column-major.
Every writer goes through a temporary file and an atomic rename.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .bbc import BbcModel
from .errors import DataError
from .hamming import BinaryIndex
from .ibc import IbcModel
from .subspace import SubspaceEntry, projector

__all__ = [
    "atomic_write",
    "matrix_to_bytes",
    "matrix_from_bytes",
    "save_matrix",
    "load_matrix",
    "save_model",
    "load_model",
    "model_kind",
    "save_index",
    "load_index",
    "Manifest",
    "VideoRecord",
    "ImageRecord",
    "save_manifest",
    "load_manifest",
    "save_subspaces",
    "load_subspaces",
    "save_run",
    "load_run",
    "format_run",
    "read_id_list",
    "write_id_list",
]

MATRIX_MAGIC = b"BSCM"
MODEL_MAGIC = b"BSCH"
INDEX_MAGIC = b"BSCI"
VERSION = 1
DTYPE_F64 = 1
KIND_CODES = {"IBC": 1, "BBC": 2}
KIND_NAMES = {v: k for k, v in KIND_CODES.items()}

_MATRIX_HEADER = struct.Struct("<4sBBHQQ")
_MODEL_HEADER = struct.Struct("<4sBBHI")
_INDEX_HEADER = struct.Struct("<4sBBHIIIIQ")

MANIFEST_HEADER = "#bsc-manifest v1"
SUBSPACES_HEADER = "#bsc-subspaces v1"
RUN_HEADER = "#bsc-run v1"


def atomic_write(path, data: bytes | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc


# ---------- matrices ----------


def matrix_to_bytes(mat) -> bytes:
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim == 1:
        mat = mat[:, None]
    if mat.ndim != 2:
        raise ValueError(f"only 2-D matrices can be stored, got shape {mat.shape}")
    header = _MATRIX_HEADER.pack(MATRIX_MAGIC, VERSION, DTYPE_F64, 0, mat.shape[0], mat.shape[1])
    return header + mat.astype("<f8").tobytes(order="F")


def matrix_from_bytes(buf: bytes, offset: int = 0, source: str = "<bytes>") -> tuple[np.ndarray, int]:
    """Parse one matrix at ``offset``; returns the matrix and the next offset."""
    if len(buf) - offset < _MATRIX_HEADER.size:
        raise DataError(f"{source}: truncated matrix header")
    magic, version, dtype, _, rows, cols = _MATRIX_HEADER.unpack_from(buf, offset)
    if magic != MATRIX_MAGIC:
        raise DataError(f"{source}: bad matrix magic {magic!r}")
    if version != VERSION:
        raise DataError(f"{source}: unsupported matrix version {version}")
    if dtype != DTYPE_F64:
        raise DataError(f"{source}: unsupported dtype code {dtype}")
    start = offset + _MATRIX_HEADER.size
    end = start + rows * cols * 8
    if end > len(buf):
        raise DataError(f"{source}: payload holds {len(buf) - start} bytes, expected {rows * cols * 8}")
    flat = np.frombuffer(buf, dtype="<f8", count=rows * cols, offset=start)
    return flat.reshape((rows, cols), order="F").astype(np.float64), end


def save_matrix(path, mat) -> None:
    atomic_write(path, matrix_to_bytes(mat))


def load_matrix(path) -> np.ndarray:
    buf = _read(path)
    mat, end = matrix_from_bytes(buf, source=str(path))
    if end != len(buf):
        raise DataError(f"{path}: {len(buf) - end} trailing bytes after matrix payload")
    return mat


# ---------- models ----------

_MODEL_MATRICES = {"IBC": ("P", "Q"), "BBC": ("P1", "P2", "Q1", "Q2", "center_V", "center_U")}


def model_kind(model) -> str:
    if isinstance(model, IbcModel):
        return "IBC"
    if isinstance(model, BbcModel):
        return "BBC"
    raise TypeError(f"not a model: {type(model).__name__}")


def _model_meta(model) -> dict:
    kind = model_kind(model)
    meta = {"kind": kind, "d": model.d, "r": model.r, "params": dict(model.params)}
    if kind == "IBC":
        meta["lambda"] = model.lam
    else:
        meta.update(c1=model.c1, c2=model.c2, mu=model.mu)
    return meta


def save_model(path, model) -> None:
    kind = model_kind(model)
    meta = json.dumps(_model_meta(model), sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [_MODEL_HEADER.pack(MODEL_MAGIC, VERSION, KIND_CODES[kind], 0, len(meta)), meta]
    parts += [matrix_to_bytes(getattr(model, name)) for name in _MODEL_MATRICES[kind]]
    atomic_write(path, b"".join(parts))


def load_model(path):
    buf = _read(path)
    if len(buf) < _MODEL_HEADER.size:
        raise DataError(f"{path}: truncated model header")
    magic, version, kind_code, _, meta_len = _MODEL_HEADER.unpack_from(buf)
    if magic != MODEL_MAGIC:
        raise DataError(f"{path}: bad model magic {magic!r}")
    if version != VERSION:
        raise DataError(f"{path}: unsupported model version {version}")
    if kind_code not in KIND_NAMES:
        raise DataError(f"{path}: unknown model kind {kind_code}")
    kind = KIND_NAMES[kind_code]
    offset = _MODEL_HEADER.size
    try:
        meta = json.loads(buf[offset : offset + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: corrupt model metadata") from exc
    offset += meta_len
    mats = {}
    for name in _MODEL_MATRICES[kind]:
        mats[name], offset = matrix_from_bytes(buf, offset, source=str(path))
    if offset != len(buf):
        raise DataError(f"{path}: {len(buf) - offset} trailing bytes")
    try:
        if kind == "IBC":
            model = IbcModel(mats["P"], mats["Q"], int(meta["d"]), float(meta["lambda"]), meta["params"])
        else:
            model = BbcModel(**mats, mu=float(meta["mu"]), params=meta["params"])
    except KeyError as exc:
        raise DataError(f"{path}: model metadata lacks {exc}") from exc
    if model.r != meta.get("r") or model.d != meta.get("d"):
        raise DataError(f"{path}: matrix shapes disagree with header (d={meta.get('d')}, r={meta.get('r')})")
    return model


# ---------- indexes ----------


def save_index(path, index: BinaryIndex, kind: str = "IBC", d: int = 0, c1: int = 0, c2: int = 0) -> None:
    header = _INDEX_HEADER.pack(INDEX_MAGIC, VERSION, KIND_CODES[kind], 0, d, index.r, c1, c2, len(index))
    ids = bytearray()
    for vid in index.ids:
        raw = vid.encode("utf-8")
        ids += struct.pack("<I", len(raw)) + raw
    atomic_write(path, header + index.words.astype("<u8").tobytes() + bytes(ids))


def load_index(path) -> tuple[BinaryIndex, dict]:
    """Returns the index and its header fields (kind, d, c1, c2)."""
    buf = _read(path)
    if len(buf) < _INDEX_HEADER.size:
        raise DataError(f"{path}: truncated index header")
    magic, version, kind_code, _, d, r, c1, c2, n = _INDEX_HEADER.unpack_from(buf)
    if magic != INDEX_MAGIC:
        raise DataError(f"{path}: bad index magic {magic!r}")
    if version != VERSION:
        raise DataError(f"{path}: unsupported index version {version}")
    if kind_code not in KIND_NAMES or r < 1:
        raise DataError(f"{path}: bad index header (kind={kind_code}, r={r})")
    w = (r + 63) // 64
    offset = _INDEX_HEADER.size
    end = offset + n * w * 8
    if end > len(buf):
        raise DataError(f"{path}: truncated code payload")
    words = np.frombuffer(buf, dtype="<u8", count=n * w, offset=offset).reshape(n, w).astype(np.uint64)
    ids = []
    offset = end
    try:
        for _ in range(n):
            (length,) = struct.unpack_from("<I", buf, offset)
            offset += 4
            if offset + length > len(buf):
                raise DataError(f"{path}: truncated id table")
            ids.append(buf[offset : offset + length].decode("utf-8"))
            offset += length
    except struct.error as exc:
        raise DataError(f"{path}: truncated id table") from exc
    if offset != len(buf):
        raise DataError(f"{path}: {len(buf) - offset} trailing bytes")
    meta = {"kind": KIND_NAMES[kind_code], "d": d, "c1": c1, "c2": c2}
    try:
        return BinaryIndex(words, tuple(ids), r), meta
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc


# ---------- manifests ----------


@dataclass(frozen=True)
class VideoRecord:
    video_id: str
    path: Path
    category: str


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    path: Path
    category: str
    source: str


@dataclass(frozen=True)
class Manifest:
    videos: tuple[VideoRecord, ...]
    images: tuple[ImageRecord, ...]

    def video_categories(self) -> dict[str, str]:
        return {v.video_id: v.category for v in self.videos}

    def image_categories(self) -> dict[str, str]:
        return {im.image_id: im.category for im in self.images}


def _check_field(value: str, what: str) -> str:
    if not value or any(ch in value for ch in "\t\n\r"):
        raise DataError(f"invalid {what} {value!r}: must be non-empty without tabs or newlines")
    return value


def save_manifest(path, manifest: Manifest) -> None:
    base = Path(path).parent
    lines = [MANIFEST_HEADER]
    for v in manifest.videos:
        rel = os.path.relpath(v.path, base)
        lines.append("\t".join(["video", _check_field(v.video_id, "video id"), rel, _check_field(v.category, "category")]))
    for im in manifest.images:
        rel = os.path.relpath(im.path, base)
        lines.append("\t".join(["image", _check_field(im.image_id, "image id"), rel, _check_field(im.category, "category"), im.source]))
    atomic_write(path, "\n".join(lines) + "\n")


def load_manifest(path) -> Manifest:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc.strerror}") from exc
    lines = text.splitlines()
    if not lines or lines[0].strip() != MANIFEST_HEADER:
        raise DataError(f"{path}: missing manifest header {MANIFEST_HEADER!r}")
    videos, images, seen = [], [], set()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        kind = cols[0]
        if kind == "video" and len(cols) == 4:
            rec = VideoRecord(cols[1], path.parent / cols[2], cols[3])
            ident = rec.video_id
        elif kind == "image" and len(cols) == 5:
            rec = ImageRecord(cols[1], path.parent / cols[2], cols[3], cols[4])
            ident = rec.image_id
        else:
            raise DataError(f"{path}:{lineno}: malformed manifest line")
        if (kind, ident) in seen:
            raise DataError(f"{path}:{lineno}: duplicate {kind} id {ident!r}")
        seen.add((kind, ident))
        if not rec.path.is_file():
            raise DataError(f"{path}:{lineno}: referenced file {rec.path} does not exist")
        (videos if kind == "video" else images).append(rec)
    return Manifest(tuple(videos), tuple(images))


# ---------- subspace stores ----------


def save_subspaces(directory, entries: Sequence[SubspaceEntry]) -> Path:
    """Write one basis file per video plus a listing; returns the listing path."""
    directory = Path(directory)
    lines = [SUBSPACES_HEADER]
    for i, entry in enumerate(entries):
        name = f"basis_{i:06d}.bscm"
        save_matrix(directory / name, entry.basis)
        lines.append(f"{_check_field(entry.video_id, 'video id')}\t{name}")
    listing = directory / "subspaces.tsv"
    atomic_write(listing, "\n".join(lines) + "\n")
    return listing


def load_subspaces(path) -> list[SubspaceEntry]:
    """Load a store from its directory or its ``subspaces.tsv`` listing."""
    path = Path(path)
    if path.is_dir():
        path = path / "subspaces.tsv"
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read subspace listing {path}: {exc.strerror}") from exc
    if not lines or lines[0].strip() != SUBSPACES_HEADER:
        raise DataError(f"{path}: missing header {SUBSPACES_HEADER!r}")
    entries = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) != 2:
            raise DataError(f"{path}:{lineno}: malformed line")
        basis = load_matrix(path.parent / cols[1])
        entries.append(SubspaceEntry(cols[0], basis, projector(basis)))
    if not entries:
        raise DataError(f"{path}: no subspaces listed")
    return entries


# ---------- run files ----------


def save_run(path, run: Mapping[str, Sequence[tuple[str, float]]]) -> None:
    """``query_id  rank  video_id  score`` lines, ranks starting at 1."""
    atomic_write(path, format_run(run))


def format_run(run: Mapping[str, Sequence[tuple[str, float]]]) -> str:
    lines = [RUN_HEADER]
    for qid, ranked in run.items():
        for rank, (vid, score) in enumerate(ranked, start=1):
            lines.append(f"{qid}\t{rank}\t{vid}\t{score!r}")
    return "\n".join(lines) + "\n"


def load_run(path) -> dict[str, list[str]]:
    """Query id -> video ids ordered by rank."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read run file {path}: {exc.strerror}") from exc
    if not lines or lines[0].strip() != RUN_HEADER:
        raise DataError(f"{path}: missing header {RUN_HEADER!r}")
    ranked: dict[str, list[tuple[int, str]]] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) != 4:
            raise DataError(f"{path}:{lineno}: malformed run line")
        try:
            rank = int(cols[1])
            float(cols[3])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: bad rank or score") from exc
        ranked.setdefault(cols[0], []).append((rank, cols[2]))
    return {q: [vid for _, vid in sorted(items)] for q, items in ranked.items()}


def read_id_list(path) -> list[str]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read id list {path}: {exc.strerror}") from exc
    return [line.strip() for line in lines if line.strip() and not line.startswith("#")]


def write_id_list(path, ids: Iterable[str]) -> None:
    atomic_write(path, "".join(f"{i}\n" for i in ids))
