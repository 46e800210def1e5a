import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hstgnn.dataio import SynthConfig, synth_samples
from hstgnn.diffengine import InitSpec, ParameterStore, Tensor, grad_check
from hstgnn.errors import ConfigError, ShapeError
from hstgnn.graphs import (
    AdjacencyLearner,
    build_fine_level,
    build_high_level,
    fine_rank,
    normalize,
    raw_adjacency,
    symmetrize,
    window_vertices,
)


def _learner(d, p, seed=0, prefix="adj"):
    store = ParameterStore()
    learner = AdjacencyLearner.register(store, prefix, d, p, np.random.default_rng(seed))
    return store, learner


def _sample(**kw):
    cfg = dict(n_samples=2, gloss_vocab_size=3, text_vocab_size=5, frames_per_gloss=2,
               d_a=6, d_o=5, noise_sigma=0.1, seed=2)
    cfg.update(kw)
    return synth_samples(SynthConfig(**cfg))[0]


class TestWindowVertices:
    def test_three_regions_span_three(self):
        frames = np.arange(4 * 3 * 2, dtype=float).reshape(4, 3, 2)
        V, tags = window_vertices(frames, 1, 3)
        assert V.shape == (9, 2)
        assert tags[:3] == [(0, -1), (1, -1), (2, -1)]
        assert tags[3:6] == [(0, 0), (1, 0), (2, 0)]

    def test_span_one_is_current_frame(self):
        frames = np.random.default_rng(0).normal(size=(5, 3, 4))
        V, _ = window_vertices(frames, 2, 1)
        assert np.array_equal(V, frames[2])

    def test_clamp_at_start(self):
        frames = np.random.default_rng(1).normal(size=(4, 3, 2))
        V, _ = window_vertices(frames, 0, 3)
        assert np.array_equal(V[:3], frames[0])
        assert np.array_equal(V[3:6], frames[0])
        assert np.array_equal(V[6:], frames[1])

    def test_clamp_at_end(self):
        frames = np.random.default_rng(1).normal(size=(4, 3, 2))
        V, _ = window_vertices(frames, 3, 5)
        assert np.array_equal(V[-3:], frames[3])
        assert np.array_equal(V[:3], frames[1])

    def test_even_span_rejected(self):
        with pytest.raises(ConfigError):
            window_vertices(np.zeros((3, 3, 2)), 0, 2)

    def test_empty_frames_rejected(self):
        with pytest.raises(ShapeError):
            window_vertices(np.zeros((0, 3, 2)), None, 3)

    def test_stacked_matches_per_frame(self):
        frames = np.random.default_rng(2).normal(size=(5, 3, 2))
        stacked, _ = window_vertices(frames, None, 3)
        for t in range(5):
            assert np.array_equal(stacked[t], window_vertices(frames, t, 3)[0])


class TestRawAdjacency:
    def test_zero_m1_gives_half(self):
        store, learner = _learner(5, 2)
        store.values["adj.M1"][...] = 0.0
        V = np.random.default_rng(0).normal(size=(4, 5))
        A = raw_adjacency(Tensor(V), learner, store).data
        assert np.all(A == 0.5)

    def test_single_vertex(self):
        store, learner = _learner(5, 2)
        v = np.random.default_rng(0).normal(size=(1, 5))
        M1, M2 = store.values["adj.M1"], store.values["adj.M2"]
        expect = 1.0 / (1.0 + math.exp(-float(v[0] @ M1 @ M2.T @ v[0])))
        A = raw_adjacency(Tensor(v), learner, store).data
        assert A.shape == (1, 1)
        assert abs(A[0, 0] - expect) < 1e-15

    def test_matches_double_loop(self):
        store, learner = _learner(5, 2, seed=3)
        rng = np.random.default_rng(3)
        V = rng.normal(size=(4, 5))
        store.values["adj.M1"][...] = rng.normal(size=(5, 2))
        store.values["adj.M2"][...] = rng.normal(size=(5, 2))
        M1, M2 = store.values["adj.M1"], store.values["adj.M2"]
        A = raw_adjacency(Tensor(V), learner, store).data
        for i in range(4):
            for j in range(4):
                s = sum(V[i, a] * M1[a, k] * M2[b, k] * V[j, b]
                        for a in range(5) for b in range(5) for k in range(2))
                assert abs(A[i, j] - 1.0 / (1.0 + math.exp(-s))) < 1e-12

    def test_dimension_mismatch(self):
        store, learner = _learner(5, 2)
        with pytest.raises(ShapeError):
            raw_adjacency(Tensor(np.zeros((3, 4))), learner, store)

    def test_rank_must_be_below_dim(self):
        with pytest.raises(ConfigError):
            _learner(4, 4)

    def test_gradcheck_through_learner_and_inputs(self):
        store, learner = _learner(5, 2, seed=4)
        store.register("V", (4, 5), InitSpec.uniform(1.0), np.random.default_rng(5))

        def loss():
            A = raw_adjacency(store.tensor("V"), learner, store)
            return (A * Tensor(np.arange(16.0).reshape(4, 4))).sum()

        assert grad_check(loss, store).max_rel_error < 1e-5


class TestSymmetrize:
    def test_half_ones(self):
        out = symmetrize(Tensor(0.5 * np.ones((3, 3)))).data
        assert np.allclose(out, 0.75, atol=1e-15)

    def test_identity(self):
        assert np.array_equal(symmetrize(Tensor(np.eye(4))).data, np.eye(4))

    def test_random_psd(self):
        A = np.random.default_rng(9).uniform(size=(4, 4))
        S = symmetrize(Tensor(A)).data
        assert np.array_equal(S, S.T)
        assert np.linalg.eigvalsh(S).min() >= -1e-10
        assert np.allclose(S, A.T @ A, atol=1e-14)

    def test_non_square(self):
        with pytest.raises(ShapeError):
            symmetrize(Tensor(np.ones((2, 3))))


class TestNormalize:
    def test_all_equal(self):
        out, flag = normalize(Tensor(0.75 * np.ones((3, 3))))
        assert np.allclose(out.data, 1.0 / 3.0, atol=1e-15)
        assert not flag

    def test_zero_flagged_unchanged(self):
        out, flag = normalize(Tensor(np.zeros((3, 3))))
        assert flag
        assert np.array_equal(out.data, np.zeros((3, 3)))

    def test_batch_flags_per_matrix(self):
        A = np.stack([np.zeros((2, 2)), np.ones((2, 2))])
        out, flags = normalize(Tensor(A))
        assert flags.tolist() == [True, False]
        assert np.array_equal(out.data[0], np.zeros((2, 2)))
        assert abs(np.linalg.norm(out.data[1]) - 1.0) < 1e-12

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 8), st.integers(0, 2**31 - 1))
    def test_unit_norm(self, n, seed):
        A = np.random.default_rng(seed).normal(size=(n, n))
        out, flag = normalize(Tensor(A))
        assert not flag
        assert abs(np.linalg.norm(out.data) - 1.0) < 1e-10


def _invariants(A: np.ndarray) -> None:
    assert np.array_equal(A, np.swapaxes(A, -1, -2))
    assert np.all(np.isfinite(A)) and np.all(A >= 0)
    for M in A.reshape((-1,) + A.shape[-2:]):
        assert np.linalg.eigvalsh(M).min() >= -1e-10
        assert abs(np.linalg.norm(M) - 1.0) < 1e-10


class TestBuilders:
    def test_high_level_shape(self):
        sample = _sample(d_a=64)
        store, learner = _learner(64, 8)
        G = build_high_level(sample, 1, 3, "appearance", learner, store)
        assert G.V.shape == (9, 64) and G.A.shape == (9, 9)
        _invariants(G.A.data)

    def test_whole_sample_matches_per_frame(self):
        sample = _sample()
        store, learner = _learner(6, 2)
        G = build_high_level(sample, None, 3, "appearance", learner, store)
        for t in range(sample.num_frames):
            Gt = build_high_level(sample, t, 3, "appearance", learner, store)
            assert np.allclose(G.A.data[t], Gt.A.data, atol=1e-15)

    def test_modalities_use_distinct_learners(self):
        sample = _sample(d_a=5)
        store = ParameterStore()
        rng = np.random.default_rng(0)
        la = AdjacencyLearner.register(store, "adj.app", 5, 2, rng)
        lo = AdjacencyLearner.register(store, "adj.flow", 5, 2, rng)
        A1 = build_high_level(sample, 0, 3, "appearance", la, store).A.data
        A2 = build_high_level(sample, 0, 3, "flow", lo, store).A.data
        assert not np.allclose(A1, A2)

    def test_constant_window_block_symmetry(self):
        sample = _sample(noise_sigma=0.0, frames_per_gloss=3)
        store, learner = _learner(6, 2)
        A = build_high_level(sample, 1, 3, "appearance", learner, store).A.data
        # frames 0..2 show the same gloss, so swapping offset blocks is a symmetry
        perm = np.r_[3:6, 0:3, 6:9]
        assert np.allclose(A[np.ix_(perm, perm)], A, atol=1e-15)

    def test_fine_level_shapes(self):
        sample = _sample()
        store, learner = _learner(2, 1)
        face = build_fine_level(sample, 0, 3, "face", learner, store)
        assert face.V.shape == (87, 2)
        lhand = build_fine_level(sample, 0, 1, "lhand", learner, store)
        assert lhand.V.shape == (21, 2)
        _invariants(face.A.data)
        _invariants(lhand.A.data)

    def test_rebuild_bitwise(self):
        sample = _sample()
        store, learner = _learner(2, 1)
        a = build_fine_level(sample, None, 3, "rhand", learner, store).A.data
        b = build_fine_level(sample, None, 3, "rhand", learner, store).A.data
        assert a.tobytes() == b.tobytes()

    def test_unknown_modality(self):
        store, learner = _learner(6, 2)
        with pytest.raises(ConfigError):
            build_high_level(_sample(), 0, 3, "depth", learner, store)

    def test_fine_rank_clamps(self):
        assert fine_rank(8, 2) == 1
        assert fine_rank(3, 64) == 3

    def test_dump(self, tmp_path):
        store, learner = _learner(6, 2)
        G = build_high_level(_sample(), 0, 1, "appearance", learner, store)
        G.dump(tmp_path / "g.json")
        assert '"hstgnn-graph"' in (tmp_path / "g.json").read_text()
