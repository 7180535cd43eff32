import numpy as np
import pytest

from gaitmorph.errors import ConfigError, DegenerateInputError, DimensionError, InfeasibleError
from gaitmorph.quantizer import (
    Codebook,
    codebook_usage,
    compressed_bits,
    ema_update,
    expire_stale,
    init_codebook_kmeans,
    ortho_penalty,
    quantize,
)


def make_codebook(emb, counts=None):
    emb = np.asarray(emb, dtype=np.float64)
    counts = np.ones(len(emb)) if counts is None else np.asarray(counts, dtype=np.float64)
    return Codebook(embeddings=emb, ema_counts=counts, ema_sums=counts[:, None] * emb)


class TestQuantize:
    def test_matches_explicit_cosine_argmax(self):
        rng = np.random.default_rng(0)
        cb = make_codebook(rng.normal(size=(6, 4)))
        z = rng.normal(size=(10, 4))
        tokens, z_q = quantize(cb, z)
        for i in range(10):
            sims = [z[i] @ e / (np.linalg.norm(z[i]) * np.linalg.norm(e))
                    for e in cb.embeddings]
            assert tokens[i] == int(np.argmax(sims))
            assert np.array_equal(z_q[i], cb.embeddings[tokens[i]])

    def test_tie_goes_to_lowest_index(self):
        cb = make_codebook([[1.0, 0.0], [2.0, 0.0], [0.0, 1.0]])  # rows 0,1 parallel
        tokens, _ = quantize(cb, np.array([[3.0, 0.0]]))
        assert tokens[0] == 0

    def test_scale_invariance(self):
        rng = np.random.default_rng(1)
        cb = make_codebook(rng.normal(size=(5, 3)))
        z = rng.normal(size=(7, 3))
        t1, _ = quantize(cb, z)
        t2, _ = quantize(cb, 10.0 * z)
        assert np.array_equal(t1, t2)

    def test_leading_shape_preserved(self):
        rng = np.random.default_rng(2)
        cb = make_codebook(rng.normal(size=(4, 3)))
        z = rng.normal(size=(2, 5, 6, 3))
        tokens, z_q = quantize(cb, z)
        assert tokens.shape == (2, 5, 6)
        assert z_q.shape == (2, 5, 6, 3)

    def test_idempotent_on_embeddings(self):
        rng = np.random.default_rng(3)
        cb = make_codebook(rng.normal(size=(5, 3)))
        z = rng.normal(size=(20, 3))
        tokens, z_q = quantize(cb, z)
        tokens2, z_q2 = quantize(cb, z_q)
        assert np.array_equal(tokens, tokens2)
        assert np.array_equal(z_q, z_q2)

    def test_zero_latent_rejected(self):
        cb = make_codebook(np.eye(3))
        with pytest.raises(DegenerateInputError):
            quantize(cb, np.zeros((1, 3)))

    def test_dim_mismatch(self):
        cb = make_codebook(np.eye(3))
        with pytest.raises(DimensionError):
            quantize(cb, np.zeros((1, 4)))


class TestEMA:
    def test_single_step_hand_computed(self):
        cb = make_codebook([[1.0, 0.0], [0.0, 1.0]])
        z = np.array([[2.0, 0.0], [4.0, 0.0]])  # both assigned to code 0
        out = ema_update(cb, z, np.array([0, 0]))
        # counts: 0.9*1 + 0.1*2 = 1.1 and 0.9*1 + 0.1*0 = 0.9
        assert np.allclose(out.ema_counts, [1.1, 0.9])
        # sums_0: 0.9*[1,0] + 0.1*[6,0] = [1.5, 0]; emb_0 = 1.5/1.1
        assert np.allclose(out.embeddings[0], [1.5 / 1.1, 0.0])
        # code 1 unassigned: embedding untouched
        assert np.array_equal(out.embeddings[1], cb.embeddings[1])

    def test_converges_to_assigned_mean(self):
        cb = make_codebook([[1.0, 0.0], [0.0, 1.0]])
        v = np.array([[0.7, 0.3]])
        for _ in range(200):
            tokens, _ = quantize(cb, v)
            cb = ema_update(cb, v, tokens)
        j = quantize(cb, v)[0][0]
        assert np.max(np.abs(cb.embeddings[j] - v[0])) < 1e-6

    def test_counts_decay_for_unused(self):
        cb = make_codebook([[1.0, 0.0], [0.0, 1.0]])
        out = ema_update(cb, np.array([[1.0, 0.0]]), np.array([0]))
        assert out.ema_counts[1] == pytest.approx(0.9)


class TestExpiry:
    def test_triggers_strictly_below_threshold(self):
        cb = make_codebook([[1.0, 0.0], [0.0, 1.0]], counts=[0.01, 0.009])
        batch = np.array([[5.0, 5.0]])
        out = expire_stale(cb, batch, seed=0)
        # count == threshold is kept; count < threshold is replaced
        assert np.array_equal(out.embeddings[0], cb.embeddings[0])
        assert np.array_equal(out.embeddings[1], batch[0])
        assert out.ema_counts[1] == 1.0
        assert np.array_equal(out.ema_sums[1], batch[0])

    def test_noop_when_all_alive(self):
        cb = make_codebook(np.eye(2))
        out = expire_stale(cb, np.array([[9.0, 9.0]]), seed=0)
        assert out is cb

    def test_seeded_replacement_deterministic(self):
        cb = make_codebook(np.eye(3), counts=[1.0, 0.0, 0.0])
        batch = np.random.default_rng(4).normal(size=(10, 3))
        a = expire_stale(cb, batch, seed=7)
        b = expire_stale(cb, batch, seed=7)
        assert np.array_equal(a.embeddings, b.embeddings)


class TestOrthoPenalty:
    def test_zero_on_orthonormal(self):
        assert ortho_penalty(make_codebook(np.eye(4))) < 1e-15

    def test_scale_invariant_rows(self):
        # scaled orthogonal rows are still orthonormal after normalization
        assert ortho_penalty(make_codebook(5.0 * np.eye(3))) < 1e-15

    def test_parallel_rows_hand_value(self):
        # gram = all-ones 2x2, off-diagonal residual 1 each: 2 / K^2 = 0.5
        cb = make_codebook([[1.0, 0.0], [2.0, 0.0]])
        assert ortho_penalty(cb) == pytest.approx(0.5)


class TestKmeansInit:
    def test_centroid_count_and_ema_seed(self):
        rng = np.random.default_rng(5)
        latents = np.concatenate([rng.normal(loc=c, scale=0.05, size=(20, 3))
                                  for c in (-2.0, 0.0, 2.0)])
        cb = init_codebook_kmeans(latents, 3, seed=1)
        assert cb.K == 3
        assert cb.ema_counts.sum() == pytest.approx(60.0)
        assert np.allclose(cb.ema_sums, cb.ema_counts[:, None] * cb.embeddings)

    def test_too_few_distinct(self):
        with pytest.raises(InfeasibleError):
            init_codebook_kmeans(np.ones((10, 3)), 2)


class TestAccounting:
    def test_usage(self):
        grids = [np.array([[0, 1], [1, 0]]), np.array([[2, 2], [0, 1]])]
        assert codebook_usage(grids, 4) == pytest.approx(0.75)

    def test_usage_empty(self):
        with pytest.raises(ConfigError):
            codebook_usage([], 4)

    def test_compressed_bits(self):
        assert compressed_bits(10, 2) == 10
        assert compressed_bits(10, 3) == 20
        assert compressed_bits(10, 8) == 30
        assert compressed_bits(10, 9) == 40

    def test_compressed_bits_rejects_k1(self):
        with pytest.raises(ConfigError):
            compressed_bits(10, 1)

    def test_fingerprint_tracks_embeddings(self):
        cb = make_codebook(np.eye(3))
        other = make_codebook(np.eye(3) * 2.0)
        assert cb.fingerprint() != other.fingerprint()
        assert cb.fingerprint() == make_codebook(np.eye(3)).fingerprint()
