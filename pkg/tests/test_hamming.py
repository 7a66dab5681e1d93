import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bsc.hamming import (
    BinaryIndex,
    PackedCode,
    hamming,
    inner_product,
    pack,
    pack_many,
    search,
    unpack,
    unpack_many,
)


def all_codes(r):
    return np.array(list(itertools.product((-1, 1), repeat=r)), dtype=np.int8)


def random_codes(rng, n, r):
    return np.where(rng.random((n, r)) < 0.5, -1, 1).astype(np.int8)


class TestPack:
    def test_all_plus(self):
        packed = pack([1, 1, 1, 1])
        assert packed.r == 4 and int(packed.words[0]) == 0b1111

    def test_all_minus(self):
        assert int(pack([-1, -1]).words[0]) == 0

    def test_bit_order(self):
        # position i is bit i, least significant first
        assert int(pack([1, -1, -1]).words[0]) == 0b001
        assert int(pack([-1, -1, 1]).words[0]) == 0b100
        code = -np.ones(70, dtype=int)
        code[64] = 1
        words = pack(code).words
        assert words.tolist() == [0, 1]

    def test_tail_bits_zero(self):
        words = pack(np.ones(70)).words
        assert int(words[1]) == 0b111111

    def test_round_trip_128(self):
        rng = np.random.default_rng(0)
        code = random_codes(rng, 1, 128)[0]
        np.testing.assert_array_equal(unpack(pack(code)), code)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.sampled_from([-1, 1]), min_size=1, max_size=200))
    def test_round_trip(self, bits):
        np.testing.assert_array_equal(unpack(pack(bits)), bits)

    def test_many_round_trip(self):
        rng = np.random.default_rng(1)
        codes = random_codes(rng, 30, 96)
        np.testing.assert_array_equal(unpack_many(pack_many(codes), 96), codes)

    def test_invalid_entry(self):
        with pytest.raises(ValueError, match=r"\+1 or -1"):
            pack([1, 0, -1])


class TestInnerProduct:
    def test_identical(self):
        a = pack(np.ones(64))
        assert inner_product(a, a) == 64 and hamming(a, a) == 0

    def test_complementary(self):
        rng = np.random.default_rng(2)
        code = random_codes(rng, 1, 64)[0]
        assert inner_product(pack(code), pack(-code)) == -64

    def test_hand_count(self):
        a, b = pack([1, 1, -1, 1]), pack([1, -1, -1, 1])
        assert hamming(a, b) == 1 and inner_product(a, b) == 2

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="length mismatch"):
            hamming(pack([1, 1]), pack([1, 1, 1]))

    @pytest.mark.parametrize("r", range(1, 13))
    def test_exhaustive_pairs(self, r):
        codes = all_codes(r)
        words = pack_many(codes)[:, 0]
        dense = codes.astype(np.int64) @ codes.T.astype(np.int64)
        differ = (codes[:, None, :] != codes[None, :, :]).sum(axis=2) if r <= 8 else None
        for lo in range(0, len(codes), 512):
            block = np.bitwise_count(words[lo : lo + 512, None] ^ words[None, :]).astype(np.int64)
            np.testing.assert_array_equal(r - 2 * block, dense[lo : lo + 512])
            if differ is not None:
                np.testing.assert_array_equal(block, differ[lo : lo + 512])
        # the scalar API on a sample of the same pairs
        rng = np.random.default_rng(r)
        for i, j in rng.integers(0, len(codes), size=(200, 2)):
            a, b = PackedCode(pack_many(codes[i])[0], r), PackedCode(pack_many(codes[j])[0], r)
            assert inner_product(a, b) == r - 2 * hamming(a, b) == int(dense[i, j])

    @pytest.mark.parametrize("r", [64, 128])
    def test_random_pairs_dense_oracle(self, r):
        rng = np.random.default_rng(r)
        a = random_codes(rng, 10_000, r)
        b = random_codes(rng, 10_000, r)
        pa, pb = pack_many(a), pack_many(b)
        dist = np.bitwise_count(pa ^ pb).sum(axis=1, dtype=np.int64)
        np.testing.assert_array_equal(r - 2 * dist, np.einsum("ij,ij->i", a.astype(np.int64), b.astype(np.int64)))
        for i in range(0, 10_000, 997):
            assert inner_product(PackedCode(pa[i], r), PackedCode(pb[i], r)) == int(a[i].astype(int) @ b[i])


class TestIndex:
    def test_single(self):
        index = BinaryIndex.from_codes(["v"], [[1, -1, 1]])
        assert search(index, [1, 1, 1]) == [("v", 1)]

    def test_exact_match_first(self):
        rng = np.random.default_rng(3)
        codes = random_codes(rng, 50, 32)
        index = BinaryIndex.from_codes([f"v{j:02d}" for j in range(50)], codes)
        top = search(index, codes[17], k=1)
        assert top == [("v17", 32)]

    def test_matches_dense_ranking(self):
        rng = np.random.default_rng(4)
        codes = random_codes(rng, 1000, 48)
        ids = [f"v{j:04d}" for j in rng.permutation(1000)]
        index = BinaryIndex.from_codes(ids, codes)
        for query in random_codes(rng, 5, 48):
            scores = codes.astype(np.int64) @ query.astype(np.int64)
            oracle = sorted(zip(ids, scores.tolist()), key=lambda t: (-t[1], t[0]))
            assert search(index, query) == oracle

    def test_order_matches_hamming(self):
        rng = np.random.default_rng(5)
        codes = random_codes(rng, 200, 20)
        ids = [f"v{j:03d}" for j in range(200)]
        index = BinaryIndex.from_codes(ids, codes)
        query = pack(random_codes(rng, 1, 20)[0])
        by_hamming = sorted(ids, key=lambda v: (hamming(index.code(ids.index(v)), query), v))
        assert [v for v, _ in search(index, query)] == by_hamming

    def test_split_independent(self):
        rng = np.random.default_rng(6)
        codes = random_codes(rng, 300, 64)
        ids = [f"v{j:03d}" for j in range(300)]
        query = pack(random_codes(rng, 1, 64)[0])
        whole = search(BinaryIndex.from_codes(ids, codes), query)
        parts = search(BinaryIndex.from_codes(ids[:100], codes[:100]), query) + search(
            BinaryIndex.from_codes(ids[100:], codes[100:]), query
        )
        assert sorted(parts, key=lambda t: (-t[1], t[0])) == whole

    def test_empty(self):
        index = BinaryIndex(np.zeros((0, 1), dtype=np.uint64), (), 8)
        with pytest.raises(ValueError, match="empty index"):
            search(index, np.ones(8))

    def test_validation(self):
        with pytest.raises(ValueError, match="unique"):
            BinaryIndex.from_codes(["a", "a"], [[1], [1]])
        with pytest.raises(ValueError, match="ids"):
            BinaryIndex(np.zeros((2, 1), dtype=np.uint64), ("a",), 4)
        with pytest.raises(ValueError, match="length mismatch"):
            BinaryIndex.from_codes(["a"], [[1, 1]]).scores(pack([1]))
