"""Bit-packed +/-1 codes and exhaustive inner-product search.

Bit ``i`` of a packed code is code position ``i``, least significant bit of
word 0 first; a set bit stands for +1. Unused tail bits are zero. For two
codes of length ``r``, ``<a, b> = r - 2 * hamming(a, b)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .subspace import rank_by_score

__all__ = ["PackedCode", "BinaryIndex", "pack", "pack_many", "unpack", "unpack_many", "hamming", "inner_product", "search"]

WORD_BITS = 64


def _words_for(r: int) -> int:
    return (r + WORD_BITS - 1) // WORD_BITS


@dataclass(frozen=True)
class PackedCode:
    words: np.ndarray  # uint64, ceil(r / 64)
    r: int

    def __eq__(self, other):
        if not isinstance(other, PackedCode):
            return NotImplemented
        return self.r == other.r and np.array_equal(self.words, other.words)

    __hash__ = None


def _check_signs(codes: np.ndarray) -> np.ndarray:
    codes = np.asarray(codes)
    if codes.size and not np.all((codes == 1) | (codes == -1)):
        raise ValueError("code entries must be +1 or -1")
    return codes


def pack_many(codes) -> np.ndarray:
    """Pack an ``(n, r)`` array of +/-1 codes into ``(n, ceil(r/64))`` uint64 words."""
    codes = _check_signs(np.atleast_2d(codes))
    n, r = codes.shape
    if r < 1:
        raise ValueError("code length must be >= 1")
    nbytes = _words_for(r) * 8
    packed = np.packbits(codes > 0, axis=1, bitorder="little")
    padded = np.zeros((n, nbytes), dtype=np.uint8)
    padded[:, : packed.shape[1]] = packed
    return padded.view("<u8").astype(np.uint64)


def unpack_many(words: np.ndarray, r: int) -> np.ndarray:
    words = np.ascontiguousarray(np.atleast_2d(words), dtype="<u8")
    bits = np.unpackbits(words.view(np.uint8), axis=1, bitorder="little")[:, :r]
    return np.where(bits == 1, 1, -1).astype(np.int8)


def pack(code) -> PackedCode:
    code = np.asarray(code).reshape(-1)
    return PackedCode(pack_many(code[None, :])[0], code.size)


def unpack(packed: PackedCode) -> np.ndarray:
    return unpack_many(packed.words[None, :], packed.r)[0]


def hamming(a: PackedCode, b: PackedCode) -> int:
    if a.r != b.r:
        raise ValueError(f"code length mismatch: {a.r} vs {b.r}")
    return int(np.bitwise_count(a.words ^ b.words).sum())


def inner_product(a: PackedCode, b: PackedCode) -> int:
    """Inner product of the +/-1 vectors behind two packed codes."""
    return a.r - 2 * hamming(a, b)


@dataclass(frozen=True)
class BinaryIndex:
    """Packed video codes with their ids; immutable once built."""

    words: np.ndarray  # (n, w) uint64
    ids: tuple[str, ...]
    r: int

    def __post_init__(self):
        words = np.ascontiguousarray(np.atleast_2d(self.words), dtype=np.uint64)
        if words.shape[0] != len(self.ids):
            raise ValueError(f"{words.shape[0]} codes but {len(self.ids)} ids")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("video ids in an index must be unique")
        if words.shape[1] != _words_for(self.r):
            raise ValueError(f"expected {_words_for(self.r)} words per code for r={self.r}, got {words.shape[1]}")
        object.__setattr__(self, "words", words)
        object.__setattr__(self, "ids", tuple(self.ids))

    @classmethod
    def from_codes(cls, ids: Sequence[str], codes) -> "BinaryIndex":
        codes = np.atleast_2d(codes)
        return cls(pack_many(codes), tuple(ids), codes.shape[1])

    def __len__(self) -> int:
        return len(self.ids)

    def code(self, i: int) -> PackedCode:
        return PackedCode(self.words[i].copy(), self.r)

    def scores(self, query: PackedCode) -> np.ndarray:
        if query.r != self.r:
            raise ValueError(f"code length mismatch: index r={self.r}, query r={query.r}")
        dist = np.bitwise_count(self.words ^ query.words[None, :]).sum(axis=1, dtype=np.int64)
        return self.r - 2 * dist


def search(index: BinaryIndex, query, k: int | None = None) -> list[tuple[str, int]]:
    """Exhaustive scan; top ``k`` by inner product, ties by ascending id."""
    if len(index) == 0:
        raise ValueError("empty index")
    if k is not None and not 1 <= k <= len(index):
        raise ValueError(f"k must lie in [1, {len(index)}], got {k}")
    if not isinstance(query, PackedCode):
        query = pack(query)
    return rank_by_score(index.ids, index.scores(query), k)
