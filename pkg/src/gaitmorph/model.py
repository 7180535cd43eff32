"""Desk-scale spatio-temporal graph autoencoder with hand-derived gradients.

Encoder: two blocks of (multi-scale graph conv over joints -> temporal conv
kernel 3 stride 2 -> GeLU), then a linear down-projection to the code
dimension; T is divided by 4 overall. Decoder mirrors the encoder with
stride-2 transposed temporal convolutions and a linear final block.

All tensors are float64 numpy arrays shaped (B, T, J, C). Gradients are
reverse-mode by hand and are checked against central finite differences in
the test suite, so every layer keeps an explicit cache.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .errors import ConfigError, DimensionError, DivergenceError

_SQRT2 = math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x):
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * np.exp(-0.5 * x * x) * _INV_SQRT2PI


def smooth_l1(pred: np.ndarray, target: np.ndarray, beta: float = 0.25):
    """Mean-reduced Smooth-L1 loss and its gradient w.r.t. pred.

    Per element: 0.5*d^2/beta for |d| < beta, else |d| - 0.5*beta; value and
    derivative are continuous at |d| = beta.
    """
    if pred.shape != target.shape:
        raise DimensionError(f"shape mismatch {pred.shape} vs {target.shape}")
    if beta <= 0:
        raise ConfigError("beta must be positive")
    d = pred - target
    ad = np.abs(d)
    quad = ad < beta
    vals = np.where(quad, 0.5 * d * d / beta, ad - 0.5 * beta)
    grad = np.where(quad, d / beta, np.sign(d)) / d.size
    return float(vals.mean()), grad


def cyclical_lr(step: int, lr_min: float = 0.0025, lr_max: float = 0.0075,
                cycle_len: int = 2000) -> float:
    """Triangular schedule: lr_min at step 0, lr_max at cycle_len/2, back to
    lr_min at cycle_len, repeating."""
    if cycle_len < 2:
        raise ConfigError("cycle_len must be >= 2")
    pos = (step % cycle_len) / cycle_len
    tri = 1.0 - abs(2.0 * pos - 1.0)
    return lr_min + (lr_max - lr_min) * tri


# ---------------------------------------------------------------------------
# configuration / graph structure

COCO18_EDGES = [
    (0, 1), (1, 2), (2, 3), (3, 4), (1, 5), (5, 6), (6, 7),
    (1, 8), (8, 9), (9, 10), (1, 11), (11, 12), (12, 13),
    (0, 14), (14, 16), (0, 15), (15, 17),
]


def skeleton_adjacency(num_joints: int, scales: int) -> np.ndarray:
    """Row-normalized adjacency powers (scales, J, J): I, A_hat, A_hat^2, ...
    where A_hat = rownorm(A + I). Rows of every power sum to 1."""
    a = np.eye(num_joints)
    edges = COCO18_EDGES if num_joints == 18 else [(i, i + 1) for i in range(num_joints - 1)]
    for i, j in edges:
        a[i, j] = a[j, i] = 1.0
    a_hat = a / a.sum(axis=1, keepdims=True)
    powers = [np.eye(num_joints)]
    for _ in range(scales - 1):
        powers.append(powers[-1] @ a_hat)
    return np.stack(powers)


def _pair(channels) -> tuple:
    ch = tuple(int(c) for c in channels)
    if len(ch) == 1:
        ch = (ch[0], ch[0])  # single width: use it for both blocks
    if len(ch) != 2:
        raise ConfigError("channel lists must have 1 or 2 entries (two blocks)")
    return ch


@dataclass(frozen=True)
class ModelConfig:
    T: int = 64
    J: int = 18
    enc_channels: tuple = (16, 32)
    dec_channels: tuple = (16, 8)
    n_latent: int = 32
    n_code: int = 16
    adjacency_scales: int = 2
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "enc_channels", _pair(self.enc_channels))
        object.__setattr__(self, "dec_channels", _pair(self.dec_channels))
        if self.T % 4 != 0 or self.T < 8:
            raise ConfigError(f"T={self.T} must be >= 8 and divisible by 4")
        if self.n_latent != self.enc_channels[-1]:
            raise ConfigError("n_latent must equal the last encoder channel width")
        if self.n_code > self.n_latent:
            raise ConfigError("n_code must be <= n_latent")
        if self.adjacency_scales < 1:
            raise ConfigError("adjacency_scales must be >= 1")

    @property
    def t_latent(self) -> int:
        return self.T // 4

    def to_dict(self) -> dict:
        return {
            "T": self.T, "J": self.J,
            "enc_channels": list(self.enc_channels),
            "dec_channels": list(self.dec_channels),
            "n_latent": self.n_latent, "n_code": self.n_code,
            "adjacency_scales": self.adjacency_scales, "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(T=d["T"], J=d["J"],
                   enc_channels=tuple(d["enc_channels"]),
                   dec_channels=tuple(d["dec_channels"]),
                   n_latent=d["n_latent"], n_code=d["n_code"],
                   adjacency_scales=d["adjacency_scales"], seed=d["seed"])


def init_params(cfg: ModelConfig) -> dict:
    """Seeded uniform init in +-1/sqrt(fan_in), parameters in a fixed
    declaration order (the checkpoint format relies on this order)."""
    rng = np.random.default_rng(cfg.seed)
    s = cfg.adjacency_scales
    params: dict[str, np.ndarray] = {}

    def u(name, shape, fan_in):
        bound = 1.0 / math.sqrt(fan_in)
        params[name] = rng.uniform(-bound, bound, size=shape)

    def block(prefix, c_in, c_out):
        u(f"{prefix}_gc_w", (s, c_in, c_out), c_in * s)
        u(f"{prefix}_gc_b", (c_out,), c_in * s)
        u(f"{prefix}_tc_w", (3, c_out, c_out), 3 * c_out)
        u(f"{prefix}_tc_b", (c_out,), 3 * c_out)

    e0, e1 = cfg.enc_channels
    d0, d1 = cfg.dec_channels
    block("enc0", 2, e0)
    block("enc1", e0, e1)
    u("down_w", (cfg.n_latent, cfg.n_code), cfg.n_latent)
    u("down_b", (cfg.n_code,), cfg.n_latent)
    u("up_w", (cfg.n_code, d0), cfg.n_code)
    u("up_b", (d0,), cfg.n_code)
    # decoder blocks upsample at full width, then mix joints down to the
    # next width (the final graph conv produces the 2 coordinates, linear)
    u("dec0_tc_w", (3, d0, d0), 3 * d0)
    u("dec0_tc_b", (d0,), 3 * d0)
    u("dec0_gc_w", (s, d0, d1), d0 * s)
    u("dec0_gc_b", (d1,), d0 * s)
    u("dec1_tc_w", (3, d1, d1), 3 * d1)
    u("dec1_tc_b", (d1,), 3 * d1)
    u("dec1_gc_w", (s, d1, 2), d1 * s)
    u("dec1_gc_b", (2,), d1 * s)
    return params


# ---------------------------------------------------------------------------
# layers (forward returns (y, cache); backward returns (dx, grads-dict))


def _flat_outer(x, dy):
    """Sum of outer products over all leading axes: (..., C) x (..., O) -> (C, O)."""
    c, o = x.shape[-1], dy.shape[-1]
    return x.reshape(-1, c).T @ dy.reshape(-1, o)


def _graph_conv_fwd(x, a_pow, w, b):
    # matmul broadcasts (S,1,1,J,J) @ (B,T,J,C) -> (S,B,T,J,C)
    xs = np.matmul(a_pow[:, None, None], x)
    y = xs[0] @ w[0]
    for s in range(1, w.shape[0]):
        y += xs[s] @ w[s]
    return y + b, (xs, a_pow, w)


def _graph_conv_bwd(dy, cache):
    xs, a_pow, w = cache
    dw = np.empty_like(w)
    dx = None
    for s in range(w.shape[0]):
        dw[s] = _flat_outer(xs[s], dy)
        dxs = dy @ w[s].T
        contrib = np.matmul(a_pow[s].T, dxs)
        dx = contrib if dx is None else dx + contrib
    db = dy.sum(axis=(0, 1, 2))
    return dx, dw, db


def _temporal_conv_fwd(x, w, b, stride):
    t_in = x.shape[1]
    t_out = t_in // stride
    xp = np.pad(x, ((0, 0), (1, 1), (0, 0), (0, 0)))
    y = np.broadcast_to(b, (x.shape[0], t_out, x.shape[2], w.shape[2])).copy()
    for k in range(3):
        y += xp[:, k:k + stride * t_out:stride] @ w[k]
    return y, (xp, w, stride, t_in)


def _temporal_conv_bwd(dy, cache):
    xp, w, stride, t_in = cache
    t_out = dy.shape[1]
    dw = np.empty_like(w)
    dxp = np.zeros_like(xp)
    for k in range(3):
        sl = slice(k, k + stride * t_out, stride)
        dw[k] = _flat_outer(xp[:, sl], dy)
        dxp[:, sl] += dy @ w[k].T
    db = dy.sum(axis=(0, 1, 2))
    return dxp[:, 1:t_in + 1], dw, db


def _temporal_deconv_fwd(x, w, b):
    """Stride-2 transposed temporal conv: zero-stuff then stride-1 conv."""
    bsz, t_in, j, c = x.shape
    u = np.zeros((bsz, 2 * t_in, j, c))
    u[:, ::2] = x
    y, conv_cache = _temporal_conv_fwd(u, w, b, stride=1)
    return y, conv_cache


def _temporal_deconv_bwd(dy, cache):
    du, dw, db = _temporal_conv_bwd(dy, cache)
    return du[:, ::2], dw, db


def _linear_fwd(x, w, b):
    return x @ w + b, (x, w)


def _linear_bwd(dy, cache):
    x, w = cache
    dw = _flat_outer(x, dy)
    db = dy.sum(axis=(0, 1, 2))
    return dy @ w.T, dw, db


# ---------------------------------------------------------------------------
# encoder / decoder


def _as_batch(x, cfg):
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    if x.ndim != 4:
        raise DimensionError(f"expected (B, T, J, C) input, got shape {x.shape}")
    return x, squeeze


def encode_forward(params, x, cfg: ModelConfig, a_pow=None):
    x, squeeze = _as_batch(x, cfg)
    if x.shape[1:] != (cfg.T, cfg.J, 2):
        raise DimensionError(f"input shape {x.shape[1:]} != ({cfg.T}, {cfg.J}, 2)")
    if a_pow is None:
        a_pow = skeleton_adjacency(cfg.J, cfg.adjacency_scales)
    caches = []
    h = x
    for prefix in ("enc0", "enc1"):
        g, cg = _graph_conv_fwd(h, a_pow, params[f"{prefix}_gc_w"], params[f"{prefix}_gc_b"])
        t, ct = _temporal_conv_fwd(g, params[f"{prefix}_tc_w"], params[f"{prefix}_tc_b"], stride=2)
        h = gelu(t)
        caches.append((prefix, cg, ct, t))
    z, cz = _linear_fwd(h, params["down_w"], params["down_b"])
    caches.append(("down", cz))
    return z, (caches, squeeze)


def encode_backward(params, dz, cache):
    caches, _ = cache
    grads = {}
    name, cz = caches[-1]
    dh, grads["down_w"], grads["down_b"] = _linear_bwd(dz, cz)
    for prefix, cg, ct, pre in reversed(caches[:-1]):
        dt = dh * gelu_grad(pre)
        dg, grads[f"{prefix}_tc_w"], grads[f"{prefix}_tc_b"] = _temporal_conv_bwd(dt, ct)
        dh, grads[f"{prefix}_gc_w"], grads[f"{prefix}_gc_b"] = _graph_conv_bwd(dg, cg)
    return dh, grads


def decode_forward(params, z_q, cfg: ModelConfig, a_pow=None):
    z_q, squeeze = _as_batch(z_q, cfg)
    if z_q.shape[1:] != (cfg.t_latent, cfg.J, cfg.n_code):
        raise DimensionError(
            f"latent shape {z_q.shape[1:]} != ({cfg.t_latent}, {cfg.J}, {cfg.n_code})")
    if a_pow is None:
        a_pow = skeleton_adjacency(cfg.J, cfg.adjacency_scales)
    caches = []
    h, cu = _linear_fwd(z_q, params["up_w"], params["up_b"])
    caches.append(("up", cu))
    for prefix in ("dec0", "dec1"):
        t, ct = _temporal_deconv_fwd(h, params[f"{prefix}_tc_w"], params[f"{prefix}_tc_b"])
        a = gelu(t)
        h, cg = _graph_conv_fwd(a, a_pow, params[f"{prefix}_gc_w"], params[f"{prefix}_gc_b"])
        caches.append((prefix, ct, t, cg))  # final graph conv stays linear
    return h, (caches, squeeze)


def decode_backward(params, dx_hat, cache):
    caches, _ = cache
    grads = {}
    dh = dx_hat
    for prefix, ct, pre, cg in reversed(caches[1:]):
        da, grads[f"{prefix}_gc_w"], grads[f"{prefix}_gc_b"] = _graph_conv_bwd(dh, cg)
        dt = da * gelu_grad(pre)
        dh, grads[f"{prefix}_tc_w"], grads[f"{prefix}_tc_b"] = _temporal_deconv_bwd(dt, ct)
    _, cu = caches[0]
    dz, grads["up_w"], grads["up_b"] = _linear_bwd(dh, cu)
    return dz, grads


def encode(params, x, cfg: ModelConfig):
    """Encoder output (T/4, J, n_code) for one sequence or a batch."""
    z, (_, squeeze) = encode_forward(params, x, cfg)
    return z[0] if squeeze else z


def decode(params, z_q, cfg: ModelConfig):
    """Decoder output (T, J, 2) for one latent grid or a batch."""
    x_hat, (_, squeeze) = decode_forward(params, z_q, cfg)
    return x_hat[0] if squeeze else x_hat


# ---------------------------------------------------------------------------
# loss with straight-through quantization


def vq_loss_and_grads(params, x, codebook, cfg: ModelConfig,
                      commit_weight: float = 0.25, beta: float = 0.25,
                      frozen=None, a_pow=None):
    """Forward + reverse pass of the VQ training objective.

    The quantizer is non-differentiable; the straight-through surrogate
    replaces z_q with z_e + offset where offset = (embedding - z_e) is
    treated as a constant. Passing ``frozen`` (the return value's
    ``frozen`` entry from a previous call) re-evaluates the surrogate with
    the quantization held fixed, which is what finite differences must
    differentiate.
    """
    from .quantizer import quantize  # local import to avoid a cycle

    if a_pow is None:
        a_pow = skeleton_adjacency(cfg.J, cfg.adjacency_scales)
    x, _ = _as_batch(x, cfg)
    z_e, enc_cache = encode_forward(params, x, cfg, a_pow)
    if frozen is None:
        tokens, z_q_emb = quantize(codebook, z_e)
        offset = z_q_emb - z_e
        commit_target = z_q_emb
    else:
        offset, commit_target, tokens = frozen
    z_q = z_e + offset  # == codebook embeddings; gradient flows as identity
    x_hat, dec_cache = decode_forward(params, z_q, cfg, a_pow)

    recon, dx_hat = smooth_l1(x_hat, x, beta)
    commit_diff = z_e - commit_target
    commit = commit_weight * float(np.mean(commit_diff ** 2))

    dz_q, dec_grads = decode_backward(params, dx_hat, dec_cache)
    dz_e = dz_q + commit_weight * 2.0 * commit_diff / commit_diff.size
    _, enc_grads = encode_backward(params, dz_e, enc_cache)

    grads = {**enc_grads, **dec_grads}
    info = {
        "recon_loss": recon,
        "commit_loss": commit,
        "loss": recon + commit,
        "tokens": tokens,
        "z_e": z_e,
        "frozen": (offset, commit_target, tokens),
    }
    return info, grads


# ---------------------------------------------------------------------------
# optimizer / training state


@dataclass
class TrainState:
    cfg: ModelConfig
    params: dict
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    lr_min: float = 0.0025
    lr_max: float = 0.0075
    cycle_len: int = 2000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    commit_weight: float = 0.25
    ortho_weight: float = 0.01

    def __post_init__(self):
        if not self.m:
            self.m = {k: np.zeros_like(p) for k, p in self.params.items()}
            self.v = {k: np.zeros_like(p) for k, p in self.params.items()}


def new_train_state(cfg: ModelConfig, **opt_kwargs) -> TrainState:
    return TrainState(cfg=cfg, params=init_params(cfg), **opt_kwargs)


def adamw_update(state: TrainState, grads: dict, lr: float) -> None:
    t = state.step + 1
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for k, p in state.params.items():
        g = grads[k]
        state.m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * g
        state.v[k] = state.beta2 * state.v[k] + (1.0 - state.beta2) * g * g
        m_hat = state.m[k] / bc1
        v_hat = state.v[k] / bc2
        p -= lr * (m_hat / (np.sqrt(v_hat) + state.eps) + state.weight_decay * p)


def train_step(state: TrainState, codebook, batch, a_pow=None, expiry_seed=None):
    """One optimization step. Mutates ``state`` in place and returns the
    updated codebook together with a metrics dict.

    The codebook is updated by EMA (no gradients) followed by stale-code
    expiry; the model parameters get an AdamW step at the cyclical rate.
    """
    from . import quantizer as q

    if isinstance(batch, np.ndarray):
        x = batch
    else:
        x = np.stack([s.frames if hasattr(s, "frames") else s for s in batch])
    info, grads = vq_loss_and_grads(
        state.params, x, codebook, state.cfg,
        commit_weight=state.commit_weight, a_pow=a_pow)
    ortho = state.ortho_weight * q.ortho_penalty(codebook)
    total = info["loss"] + ortho
    if not np.isfinite(total):
        raise DivergenceError(
            f"non-finite loss at step {state.step}: recon={info['recon_loss']}, "
            f"commit={info['commit_loss']}, ortho={ortho}")

    lr = cyclical_lr(state.step, state.lr_min, state.lr_max, state.cycle_len)
    adamw_update(state, grads, lr)

    codebook = q.ema_update(codebook, info["z_e"], info["tokens"])
    seed = expiry_seed if expiry_seed is not None else [state.cfg.seed, state.step]
    codebook = q.expire_stale(codebook, info["z_e"], seed)
    state.step += 1

    metrics = {
        "step": state.step,
        "lr": lr,
        "recon_loss": info["recon_loss"],
        "commit_loss": info["commit_loss"],
        "ortho_loss": ortho,
        "total": total,
        "usage": q.codebook_usage([info["tokens"]], codebook.K),
    }
    return codebook, metrics
