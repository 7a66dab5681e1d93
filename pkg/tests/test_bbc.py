import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bsc.bbc import (
    BbcModel,
    BbcTrainingSet,
    bilinear_encode,
    build_delta,
    encode_image_bbc,
    encode_images_bbc,
    encode_video_bbc,
    encode_videos_bbc,
    flatten_codes,
    objective,
    polar_P1,
    polar_P2,
    preprocess,
    train_bbc,
    update_code_V,
    update_codes,
    update_P1,
    update_P2,
)
from bsc.ibc import sign
from bsc.subspace import make_entry, vec


def orthonormal(rng, d, c):
    q, _ = np.linalg.qr(rng.standard_normal((d, c)))
    return q


def clustered_set(seed, k=40, n=80, d=16, clusters=4):
    rng = np.random.default_rng(seed)
    bases = [orthonormal(rng, d, 3) for _ in range(clusters)]
    vlab = [j % clusters for j in range(k)]
    ilab = [i % clusters for i in range(n)]
    projectors = np.stack([make_entry(f"v{j}", bases[c] @ rng.standard_normal((3, 3))).projector for j, c in enumerate(vlab)])
    images = np.stack([bases[c] @ rng.standard_normal(3) + 0.1 * rng.standard_normal(d) for c in ilab])
    return BbcTrainingSet.from_data(projectors, images, build_delta(ilab, vlab))


def objective_by_sums(P1, P2, Q1, Q2, mu, train, codes_U, codes_V):
    """Direct evaluation of the three trace sums, one item at a time."""
    c = P1.shape[1] * P2.shape[1]
    total = 0.0
    for B, U in zip(codes_U, train.U_mats):
        total += np.trace(B @ Q2.T @ U.T @ Q1)
    for B, V in zip(codes_V, train.V_mats):
        total += np.trace(B @ P2.T @ V.T @ P1)
    for i, BU in enumerate(codes_U):
        for j, BV in enumerate(codes_V):
            total += mu / np.sqrt(c) * train.delta[i, j] * np.trace(BV @ BU.T)
    return total


class TestPreprocess:
    def test_single_item_is_zero(self):
        out, stats = preprocess([np.eye(3)])
        np.testing.assert_array_equal(out, np.zeros((1, 3, 3)))
        assert stats.zero.tolist() == [True]

    def test_symmetric_pair(self):
        M = np.array([[1.0, 2.0], [3.0, -1.0]])
        out, stats = preprocess([M, -M])
        np.testing.assert_allclose(out[0], M / np.linalg.norm(M), atol=1e-15)
        np.testing.assert_allclose(out[1], -M / np.linalg.norm(M), atol=1e-15)
        assert not stats.zero.any()

    def test_random_stack(self):
        rng = np.random.default_rng(0)
        mats = rng.standard_normal((9, 4, 4))
        out, stats = preprocess(mats)
        np.testing.assert_allclose((mats - stats.mean).sum(axis=0), 0.0, atol=1e-10)
        norms = np.linalg.norm(out, axis=(1, 2))
        assert np.all((np.abs(norms - 1) <= 1e-12) | (norms == 0))

    def test_duplicate_of_mean_is_flagged(self):
        out, stats = preprocess([np.eye(2), np.eye(2)])
        assert stats.zero.all()
        np.testing.assert_array_equal(out, 0.0)

    def test_empty(self):
        with pytest.raises(ValueError):
            preprocess(np.zeros((0, 2, 2)))


class TestBilinearEncode:
    def test_identity_rotations(self):
        X = np.array([[1.0, -2.0], [0.0, 3.0]])
        np.testing.assert_array_equal(bilinear_encode(np.eye(2), np.eye(2), X), [[1, -1], [1, 1]])

    def test_zero_matrix(self):
        rng = np.random.default_rng(1)
        code = bilinear_encode(orthonormal(rng, 5, 2), orthonormal(rng, 5, 3), np.zeros((5, 5)))
        np.testing.assert_array_equal(code, np.ones((2, 3)))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape mismatch"):
            bilinear_encode(np.eye(3)[:, :2], np.eye(2), np.ones((3, 3)))

    @pytest.mark.parametrize("seed", range(10))
    def test_kronecker_oracle(self, seed):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(2, 9))
        c1, c2 = int(rng.integers(1, d + 1)), int(rng.integers(1, d + 1))
        R1, R2 = orthonormal(rng, d, c1), orthonormal(rng, d, c2)
        X = rng.standard_normal((d, d))
        code = bilinear_encode(R1, R2, X)
        full = sign(np.kron(R2, R1).T @ vec(X))
        np.testing.assert_array_equal(vec(code), full)
        np.testing.assert_array_equal(flatten_codes(code[None])[0], full)

    @settings(max_examples=40, deadline=None)
    @given(d=st.integers(1, 8), seed=st.integers(0, 2**32 - 1))
    def test_kronecker_identity(self, d, seed):
        rng = np.random.default_rng(seed)
        R1, R2 = rng.standard_normal((d, d)), rng.standard_normal((d, d))
        X = rng.standard_normal((d, d))
        assert np.abs(vec(R1.T @ X @ R2) - np.kron(R2, R1).T @ vec(X)).max() <= 1e-10


class TestObjective:
    def test_single_video_abs_sum(self):
        rng = np.random.default_rng(2)
        d = 4
        P1, P2 = orthonormal(rng, d, 2), orthonormal(rng, d, 3)
        V = rng.standard_normal((1, d, d))
        train = BbcTrainingSet(V, np.zeros((1, d, d)), np.zeros((1, 1)))
        BV = bilinear_encode(P1, P2, V[0])[None]
        BU = np.ones((1, 2, 3), dtype=np.int8)
        model = BbcModel(P1, P2, P1, P2, 0.0, np.zeros((d, d)), np.zeros((d, d)))
        M = P1.T @ V[0] @ P2
        assert objective(model, train, BU, BV) == pytest.approx(np.abs(M).sum(), abs=1e-12)

    def test_all_plus_codes_zero_data(self):
        n, k, d, c1, c2 = 3, 5, 4, 2, 2
        train = BbcTrainingSet(np.zeros((k, d, d)), np.zeros((n, d, d)), np.ones((n, k)))
        R = np.eye(d)[:, :2]
        model = BbcModel(R, R, R, R, 1.0, np.zeros((d, d)), np.zeros((d, d)))
        codes_U = np.ones((n, c1, c2))
        codes_V = np.ones((k, c1, c2))
        assert objective(model, train, codes_U, codes_V) == pytest.approx(n * k * np.sqrt(c1 * c2), abs=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_random_instance(self, seed):
        rng = np.random.default_rng(seed)
        d, c1, c2, n, k = 5, 2, 3, 4, 3
        train = BbcTrainingSet(
            rng.standard_normal((k, d, d)), rng.standard_normal((n, d, d)), (rng.random((n, k)) < 0.5).astype(float)
        )
        rots = [orthonormal(rng, d, c) for c in (c1, c2, c1, c2)]
        mu = float(rng.uniform(0, 3))
        model = BbcModel(*rots, mu, np.zeros((d, d)), np.zeros((d, d)))
        codes_U = sign(rng.standard_normal((n, c1, c2)))
        codes_V = sign(rng.standard_normal((k, c1, c2)))
        want = objective_by_sums(*rots, mu, train, codes_U.astype(float), codes_V.astype(float))
        assert objective(model, train, codes_U, codes_V) == pytest.approx(want, abs=1e-10)

    def test_shape_mismatch(self):
        train = BbcTrainingSet(np.zeros((2, 3, 3)), np.zeros((1, 3, 3)), np.zeros((1, 2)))
        R = np.eye(3)[:, :1]
        model = BbcModel(R, R, R, R, 1.0, np.zeros((3, 3)), np.zeros((3, 3)))
        with pytest.raises(ValueError):
            objective(model, train, np.ones((1, 1, 1)), np.ones((1, 1, 1)))


class TestPolar:
    def test_positive_diagonal(self):
        np.testing.assert_allclose(polar_P1(np.diag([2.0, 3.0])), np.eye(2), atol=1e-15)
        np.testing.assert_allclose(polar_P2(np.diag([2.0, 3.0])), np.eye(2), atol=1e-15)

    def test_swap(self):
        D1 = np.array([[0.0, 1.0], [1.0, 0.0]])
        got = polar_P1(D1)
        # brute force over rotations and reflections of the plane
        best, best_P = -np.inf, None
        for theta in np.linspace(0, 2 * np.pi, 3601):
            c, s = np.cos(theta), np.sin(theta)
            for P in (np.array([[c, -s], [s, c]]), np.array([[c, s], [s, -c]])):
                if np.trace(D1 @ P) > best:
                    best, best_P = np.trace(D1 @ P), P
        np.testing.assert_allclose(got, [[0.0, 1.0], [1.0, 0.0]], atol=1e-12)
        np.testing.assert_allclose(got, best_P, atol=1e-9)

    def test_negative_identity(self):
        np.testing.assert_allclose(polar_P2(-np.eye(3)), -np.eye(3), atol=1e-15)

    @pytest.mark.parametrize("seed", range(10))
    def test_random_probes(self, seed):
        rng = np.random.default_rng(seed)
        d, c = 7, int(rng.integers(1, 8))
        D1 = rng.standard_normal((c, d))
        D2 = rng.standard_normal((d, c))
        P1, P2 = polar_P1(D1), polar_P2(D2)
        assert np.abs(P1.T @ P1 - np.eye(c)).max() <= 1e-8
        assert np.abs(P2.T @ P2 - np.eye(c)).max() <= 1e-8
        for _ in range(100):
            probe = orthonormal(rng, d, c)
            assert np.trace(D1 @ P1) >= np.trace(D1 @ probe) - 1e-12
            assert np.trace(P2.T @ D2) >= np.trace(probe.T @ D2) - 1e-12

    def test_update_matches_definition(self):
        rng = np.random.default_rng(11)
        d, c1, c2 = 6, 2, 3
        mats = rng.standard_normal((5, d, d))
        codes = sign(rng.standard_normal((5, c1, c2)))
        R1, R2 = orthonormal(rng, d, c1), orthonormal(rng, d, c2)
        D1 = sum(B @ R2.T @ X.T for B, X in zip(codes, mats))
        D2 = sum(X.T @ R1 @ B for B, X in zip(codes, mats))
        np.testing.assert_allclose(update_P1(mats, R2, codes), polar_P1(D1), atol=1e-12)
        np.testing.assert_allclose(update_P2(mats, R1, codes), polar_P2(D2), atol=1e-12)


class TestCodeUpdate:
    def test_no_coupling(self):
        X = np.array([[1.0, -2.0], [0.0, 3.0]])
        B = update_code_V(np.eye(2), np.eye(2), X, np.ones((1, 2, 2)), [1.0], 0.0)
        np.testing.assert_array_equal(B, [[1, -1], [1, 1]])

    def test_large_mu_copies_neighbour(self):
        rng = np.random.default_rng(12)
        neighbour = sign(rng.standard_normal((1, 3, 2)))
        X = rng.standard_normal((4, 4))
        B = update_code_V(orthonormal(rng, 4, 3), orthonormal(rng, 4, 2), X, neighbour, [1.0], 1e6)
        np.testing.assert_array_equal(B, neighbour[0])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape mismatch"):
            update_code_V(np.eye(2), np.eye(2), np.ones((2, 2)), np.ones((1, 3, 2)), [1.0], 1.0)

    @pytest.mark.parametrize("seed", range(15))
    def test_exhaustive_argmax(self, seed):
        rng = np.random.default_rng(seed)
        d = 5
        c1 = int(rng.integers(1, 4))
        c2 = int(rng.integers(1, min(d, 12 // c1) + 1))
        R1, R2 = orthonormal(rng, d, c1), orthonormal(rng, d, c2)
        X = rng.standard_normal((d, d))
        others = sign(rng.standard_normal((4, c1, c2)))
        weights = (rng.random(4) < 0.6).astype(float)
        mu = float(rng.uniform(0, 4))
        D3 = (R1.T @ X @ R2 + mu / np.sqrt(c1 * c2) * np.tensordot(weights, others, axes=1)).T
        best, best_B = -np.inf, None
        for bits in itertools.product((-1.0, 1.0), repeat=c1 * c2):
            B = np.array(bits).reshape(c1, c2)
            if np.trace(B @ D3) > best:
                best, best_B = np.trace(B @ D3), B
        np.testing.assert_array_equal(update_code_V(R1, R2, X, others, weights, mu), best_B)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(13)
        d, c1, c2 = 5, 2, 2
        R1, R2 = orthonormal(rng, d, c1), orthonormal(rng, d, c2)
        mats = rng.standard_normal((6, d, d))
        others = sign(rng.standard_normal((4, c1, c2)))
        delta = (rng.random((6, 4)) < 0.5).astype(float)
        batch = update_codes(R1, R2, mats, others, delta, 0.7)
        for j in range(6):
            np.testing.assert_array_equal(batch[j], update_code_V(R1, R2, mats[j], others, delta[j], 0.7))


class TestTrainBbc:
    def test_top_singular_value(self):
        rng = np.random.default_rng(14)
        V = rng.standard_normal((1, 2, 2))
        train = BbcTrainingSet(V, np.zeros((1, 2, 2)), np.ones((1, 1)))
        history = []
        model = train_bbc(train, 1, 1, mu=0.0, iters=500, seed=1, history=history)
        sigma = np.linalg.svd(V[0], compute_uv=False)[0]
        assert history[-1][2] == pytest.approx(sigma, abs=1e-8)
        assert model.params["sweeps"] < 500

    def test_decoupled_video_side(self):
        train = clustered_set(15, k=10, n=20, d=6)
        perm = np.random.default_rng(0).permutation(20)
        shuffled = BbcTrainingSet(train.V_mats, train.U_mats[perm], train.delta[perm])
        a = train_bbc(train, 2, 2, mu=0.0, iters=5, seed=2)
        b = train_bbc(shuffled, 2, 2, mu=0.0, iters=5, seed=2)
        np.testing.assert_array_equal(a.P1, b.P1)
        np.testing.assert_array_equal(a.P2, b.P2)

    def test_monotone_and_orthonormal(self):
        train = clustered_set(16)
        history = []
        model = train_bbc(train, 4, 4, mu=1.0, iters=10, seed=0, history=history)
        values = [h[2] for h in history]
        assert all(b >= a - 1e-9 for a, b in zip(values, values[1:]))
        for R in (model.P1, model.P2, model.Q1, model.Q2):
            assert np.abs(R.T @ R - np.eye(4)).max() <= 1e-8

    def test_deterministic(self):
        train = clustered_set(17, k=12, n=24, d=8)
        a = train_bbc(train, 2, 4, seed=5)
        b = train_bbc(train, 2, 4, seed=5)
        for x, y in zip((a.P1, a.P2, a.Q1, a.Q2), (b.P1, b.P2, b.Q1, b.Q2)):
            assert x.tobytes() == y.tobytes()

    @pytest.mark.parametrize("kwargs", [{"c1": 5, "c2": 1}, {"c1": 1, "c2": 0}, {"c1": 2, "c2": 2, "mu": -1.0}, {"c1": 2, "c2": 2, "iters": 0}])
    def test_bad_arguments(self, kwargs):
        train = BbcTrainingSet(np.zeros((2, 4, 4)), np.zeros((2, 4, 4)), np.zeros((2, 2)))
        with pytest.raises(ValueError):
            train_bbc(train, **kwargs)

    def test_training_set_validation(self):
        with pytest.raises(ValueError, match="delta"):
            BbcTrainingSet(np.zeros((2, 3, 3)), np.zeros((1, 3, 3)), np.full((1, 2), 0.5))


class TestBuildDelta:
    def test_labels(self):
        np.testing.assert_array_equal(build_delta(["a", "b"], ["b", "a", "a"]), [[0, 1, 1], [1, 0, 0]])


class TestEncode:
    def model(self, rng, d=5, c1=2, c2=3, center_V=None, center_U=None):
        zero = np.zeros((d, d))
        return BbcModel(
            orthonormal(rng, d, c1), orthonormal(rng, d, c2), orthonormal(rng, d, c1), orthonormal(rng, d, c2),
            1.0, zero if center_V is None else center_V, zero if center_U is None else center_U,
        )

    def test_input_equal_to_mean(self):
        q = np.array([1.0, 2.0, -1.0])
        outer = np.outer(q, q)
        entry = make_entry("v", np.eye(3)[:, :2])
        model = BbcModel(np.eye(3), np.eye(3), np.eye(3), np.eye(3), 1.0, entry.projector, outer)
        np.testing.assert_array_equal(encode_image_bbc(model, q), np.ones((3, 3)))
        np.testing.assert_array_equal(encode_video_bbc(model, entry), np.ones((3, 3)))

    def test_repeatable(self):
        rng = np.random.default_rng(18)
        model = self.model(rng)
        q = rng.standard_normal(5)
        np.testing.assert_array_equal(encode_image_bbc(model, q), encode_image_bbc(model, q))

    def test_kronecker_full_projection(self):
        rng = np.random.default_rng(19)
        d = 5
        mean_V = rng.standard_normal((d, d))
        mean_U = rng.standard_normal((d, d))
        model = self.model(rng, center_V=mean_V, center_U=mean_U)
        projectors = np.stack([make_entry(f"v{j}", rng.standard_normal((d, 2))).projector for j in range(6)])
        queries = rng.standard_normal((6, d))
        videos = flatten_codes(encode_videos_bbc(model, projectors))
        images = flatten_codes(encode_images_bbc(model, queries))
        for j, S in enumerate(projectors):
            X = (S - mean_V) / np.linalg.norm(S - mean_V)
            np.testing.assert_array_equal(videos[j], sign(np.kron(model.P2, model.P1).T @ vec(X)))
        for i, q in enumerate(queries):
            X = np.outer(q, q) - mean_U
            X = X / np.linalg.norm(X)
            np.testing.assert_array_equal(images[i], sign(np.kron(model.Q2, model.Q1).T @ vec(X)))

    def test_dimension_mismatch(self):
        model = self.model(np.random.default_rng(20))
        with pytest.raises(ValueError):
            encode_image_bbc(model, np.ones(4))
        with pytest.raises(ValueError):
            encode_videos_bbc(model, np.ones((2, 4, 4)))
