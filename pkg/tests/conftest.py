import numpy as np
import pytest

from gaitmorph.data import GeneratorConfig, VariationLabel, generate_dataset, normalize
from gaitmorph.model import ModelConfig, init_params
from gaitmorph.quantizer import Codebook


@pytest.fixture
def tiny_cfg():
    return ModelConfig(T=8, J=4, enc_channels=(4,), dec_channels=(4,),
                       n_latent=4, n_code=4, seed=3)


@pytest.fixture
def tiny_codebook():
    rng = np.random.default_rng(11)
    emb = rng.normal(size=(4, 4))
    return Codebook(embeddings=emb, ema_counts=np.ones(4), ema_sums=emb.copy())


@pytest.fixture
def small_dataset():
    cfg = GeneratorConfig(subjects=2, walks_per_variation=2,
                          variations=(VariationLabel("NM", 0.0),),
                          T=16, J=4, noise_std=0.01, seed=7)
    return generate_dataset(cfg)


def random_sequences(n, T=16, J=6, seed=0):
    """Normalized random-walk skeleton sequences for property tests."""
    from gaitmorph.data import SkeletonSequence

    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        base = rng.normal(scale=0.5, size=(1, J, 2))
        wiggle = rng.normal(scale=0.05, size=(T, J, 2))
        frames = base + wiggle
        # keep the torso (joints 1 and J//2) non-degenerate
        frames[:, 1, 1] += 1.0
        out.append(SkeletonSequence(frames, subject_id=0))
    return out


def finite_difference_check(params, loss_fn, grads, h=1e-5, rel_tol=1e-4, abs_tol=1e-8):
    """Compare analytic grads against central differences; returns the worst
    (relative error, parameter name)."""
    worst = (0.0, None)
    for name, p in params.items():
        g = grads[name]
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + h
            lp = loss_fn()
            p[idx] = orig - h
            lm = loss_fn()
            p[idx] = orig
            fd = (lp - lm) / (2.0 * h)
            diff = abs(fd - g[idx])
            denom = max(abs(fd), abs(g[idx]))
            if denom < abs_tol:
                continue
            rel = diff / denom
            if rel > worst[0]:
                worst = (rel, f"{name}{idx}")
    assert worst[0] < rel_tol, f"gradient mismatch at {worst[1]}: rel err {worst[0]:.2e}"
    return worst
