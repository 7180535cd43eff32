import numpy as np
import pytest

from gaitmorph.errors import ConfigError, DimensionError, DivergenceError
from gaitmorph.model import (
    ModelConfig,
    adamw_update,
    cyclical_lr,
    decode,
    encode,
    gelu,
    gelu_grad,
    init_params,
    new_train_state,
    skeleton_adjacency,
    smooth_l1,
    train_step,
    vq_loss_and_grads,
)


class TestActivations:
    def test_gelu_values(self):
        assert gelu(np.array(0.0)) == 0.0
        assert abs(gelu(np.array(10.0)) - 10.0) < 1e-12
        assert abs(gelu(np.array(-10.0))) < 1e-12

    def test_gelu_grad_matches_fd(self):
        x = np.linspace(-3, 3, 25)
        h = 1e-6
        fd = (gelu(x + h) - gelu(x - h)) / (2 * h)
        assert np.max(np.abs(fd - gelu_grad(x))) < 1e-8


class TestSmoothL1:
    def test_zero_at_equal(self):
        x = np.ones((3, 4))
        loss, grad = smooth_l1(x, x)
        assert loss == 0.0 and np.all(grad == 0.0)

    def test_quadratic_region(self):
        # |d| = 0.1 < beta = 0.25 -> per-element 0.5 * 0.01 / 0.25 = 0.02
        loss, _ = smooth_l1(np.full((2, 2), 0.1), np.zeros((2, 2)))
        assert abs(loss - 0.02) < 1e-15

    def test_linear_region(self):
        # |d| = 1 >= beta -> per-element 1 - 0.125
        loss, _ = smooth_l1(np.ones((2, 2)), np.zeros((2, 2)))
        assert abs(loss - 0.875) < 1e-15

    def test_continuous_at_beta(self):
        eps = 1e-9
        lo, _ = smooth_l1(np.array([0.25 - eps]), np.array([0.0]))
        hi, _ = smooth_l1(np.array([0.25 + eps]), np.array([0.0]))
        assert abs(lo - hi) < 1e-8

    def test_grad_matches_fd(self):
        rng = np.random.default_rng(0)
        pred = rng.normal(scale=0.5, size=(3, 5))
        target = rng.normal(scale=0.5, size=(3, 5))
        _, grad = smooth_l1(pred, target)
        h = 1e-7
        for idx in np.ndindex(pred.shape):
            p = pred.copy()
            p[idx] += h
            lp, _ = smooth_l1(p, target)
            p[idx] -= 2 * h
            lm, _ = smooth_l1(p, target)
            fd = (lp - lm) / (2 * h)
            assert abs(fd - grad[idx]) < 1e-7

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            smooth_l1(np.zeros((2, 2)), np.zeros((2, 3)))


class TestCyclicalLR:
    def test_endpoints(self):
        assert cyclical_lr(0) == 0.0025
        assert cyclical_lr(1000) == 0.0075
        assert cyclical_lr(2000) == 0.0025
        assert cyclical_lr(3000) == 0.0075

    def test_midpoints(self):
        assert abs(cyclical_lr(500) - 0.005) < 1e-15
        assert abs(cyclical_lr(1500) - 0.005) < 1e-15

    def test_custom_range(self):
        assert cyclical_lr(5, lr_min=0.1, lr_max=0.3, cycle_len=10) == 0.3


class TestAdjacency:
    def test_rows_sum_to_one(self):
        for j in (4, 18):
            a = skeleton_adjacency(j, 3)
            assert a.shape == (3, j, j)
            assert np.allclose(a.sum(axis=2), 1.0)

    def test_scale_zero_is_identity(self):
        a = skeleton_adjacency(5, 2)
        assert np.array_equal(a[0], np.eye(5))

    def test_chain_connectivity(self):
        a = skeleton_adjacency(4, 2)
        assert a[1][0, 1] > 0 and a[1][0, 2] == 0


class TestModelConfig:
    def test_single_width_duplicated(self, tiny_cfg):
        assert tiny_cfg.enc_channels == (4, 4)
        assert tiny_cfg.dec_channels == (4, 4)

    def test_t_latent(self, tiny_cfg):
        assert tiny_cfg.t_latent == 2

    def test_invalid_t(self):
        with pytest.raises(ConfigError):
            ModelConfig(T=10, J=4, enc_channels=(4,), dec_channels=(4,), n_latent=4, n_code=4)

    def test_n_latent_must_match_encoder(self):
        with pytest.raises(ConfigError):
            ModelConfig(T=8, J=4, enc_channels=(4, 8), dec_channels=(4,), n_latent=4, n_code=4)

    def test_roundtrip_dict(self, tiny_cfg):
        assert ModelConfig.from_dict(tiny_cfg.to_dict()) == tiny_cfg


class TestForward:
    def test_param_init_deterministic(self, tiny_cfg):
        a = init_params(tiny_cfg)
        b = init_params(tiny_cfg)
        assert list(a) == list(b)
        for k in a:
            assert np.array_equal(a[k], b[k])

    def test_encode_decode_shapes(self, tiny_cfg):
        params = init_params(tiny_cfg)
        x = np.random.default_rng(0).normal(size=(8, 4, 2))
        z = encode(params, x, tiny_cfg)
        assert z.shape == (2, 4, 4)
        out = decode(params, z, tiny_cfg)
        assert out.shape == (8, 4, 2)

    def test_batch_matches_single(self, tiny_cfg):
        params = init_params(tiny_cfg)
        x = np.random.default_rng(1).normal(size=(3, 8, 4, 2))
        zb = encode(params, x, tiny_cfg)
        for i in range(3):
            assert np.allclose(zb[i], encode(params, x[i], tiny_cfg), atol=1e-14)

    def test_wrong_input_shape(self, tiny_cfg):
        with pytest.raises(DimensionError):
            encode(init_params(tiny_cfg), np.zeros((8, 5, 2)), tiny_cfg)


class TestVQLoss:
    def test_frozen_reproduces_loss(self, tiny_cfg, tiny_codebook):
        params = init_params(tiny_cfg)
        x = np.random.default_rng(2).normal(size=(2, 8, 4, 2))
        info, _ = vq_loss_and_grads(params, x, tiny_codebook, tiny_cfg)
        info2, _ = vq_loss_and_grads(params, x, tiny_codebook, tiny_cfg, frozen=info["frozen"])
        assert info2["loss"] == info["loss"]
        assert np.array_equal(info2["tokens"], info["tokens"])

    def test_sampled_gradcheck(self, tiny_cfg, tiny_codebook):
        # quick spot check; the full sweep lives in the acceptance suite
        params = init_params(tiny_cfg)
        x = np.random.default_rng(3).normal(size=(1, 8, 4, 2))
        info, grads = vq_loss_and_grads(params, x, tiny_codebook, tiny_cfg)
        frozen = info["frozen"]

        def loss():
            i, _ = vq_loss_and_grads(params, x, tiny_codebook, tiny_cfg, frozen=frozen)
            return i["loss"]

        rng = np.random.default_rng(4)
        h = 1e-5
        names = list(params)
        for _ in range(30):
            name = names[rng.integers(len(names))]
            idx = tuple(rng.integers(s) for s in params[name].shape)
            orig = params[name][idx]
            params[name][idx] = orig + h
            lp = loss()
            params[name][idx] = orig - h
            lm = loss()
            params[name][idx] = orig
            fd = (lp - lm) / (2 * h)
            g = grads[name][idx]
            denom = max(abs(fd), abs(g))
            if denom > 1e-8:
                assert abs(fd - g) / denom < 1e-4, f"{name}{idx}: fd={fd} g={g}"

    def test_commit_loss_nonnegative(self, tiny_cfg, tiny_codebook):
        params = init_params(tiny_cfg)
        x = np.random.default_rng(5).normal(size=(1, 8, 4, 2))
        info, _ = vq_loss_and_grads(params, x, tiny_codebook, tiny_cfg)
        assert info["commit_loss"] >= 0.0
        assert info["loss"] == info["recon_loss"] + info["commit_loss"]


class TestTraining:
    def test_adamw_weight_decay_shrinks_params(self, tiny_cfg):
        state = new_train_state(tiny_cfg, weight_decay=0.1)
        before = {k: p.copy() for k, p in state.params.items()}
        zero = {k: np.zeros_like(p) for k, p in state.params.items()}
        adamw_update(state, zero, lr=0.01)
        for k in before:
            assert np.allclose(state.params[k], before[k] * (1 - 0.01 * 0.1))

    def test_loss_decreases(self):
        cfg = ModelConfig(T=8, J=4, enc_channels=(4, 8), dec_channels=(8, 4),
                          n_latent=8, n_code=4, seed=0)
        state = new_train_state(cfg, cycle_len=200)
        x = np.random.default_rng(6).normal(scale=0.3, size=(1, 8, 4, 2))
        rng = np.random.default_rng(7)
        cb_emb = rng.normal(size=(4, 4))
        from gaitmorph.quantizer import Codebook
        cb = Codebook(embeddings=cb_emb, ema_counts=np.ones(4), ema_sums=cb_emb.copy())
        losses = []
        for _ in range(200):
            cb, m = train_step(state, cb, x)
            losses.append(m["recon_loss"])
        assert np.mean(losses[-20:]) < 0.5 * np.mean(losses[:20])

    def test_divergence_raises(self, tiny_cfg, tiny_codebook):
        state = new_train_state(tiny_cfg)
        state.params["down_w"][0, 0] = np.nan
        x = np.random.default_rng(7).normal(size=(1, 8, 4, 2))
        with pytest.raises(DivergenceError):
            train_step(state, tiny_codebook, x)

    def test_train_step_deterministic(self, tiny_cfg, tiny_codebook):
        x = np.random.default_rng(8).normal(size=(2, 8, 4, 2))
        results = []
        for _ in range(2):
            state = new_train_state(tiny_cfg)
            cb = tiny_codebook
            for _ in range(5):
                cb, m = train_step(state, cb, x)
            results.append((cb.embeddings.copy(),
                            {k: p.copy() for k, p in state.params.items()}))
        assert np.array_equal(results[0][0], results[1][0])
        for k in results[0][1]:
            assert np.array_equal(results[0][1][k], results[1][1][k])
