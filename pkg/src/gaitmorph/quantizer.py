"""Discrete bottleneck: learnable codebook with cosine nearest-neighbor
lookup, K-means init, EMA updates, stale-code expiry and usage accounting.

Lookup normalizes both sides and takes the argmax of dot products (ties go
to the lowest index); the stored, unnormalized embedding is what gets
decoded.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DegenerateInputError, DimensionError, InfeasibleError
from .numerics import kmeans

EMA_EPS = 1e-5


@dataclass(frozen=True)
class Codebook:
    embeddings: np.ndarray  # (K, n_code)
    ema_counts: np.ndarray  # (K,)
    ema_sums: np.ndarray    # (K, n_code)
    decay: float = 0.9
    expiry_threshold: float = 0.01

    def __post_init__(self):
        if self.embeddings.ndim != 2 or self.embeddings.shape[0] < 2:
            raise ConfigError("codebook needs K >= 2 embedding rows")
        if not np.all(np.isfinite(self.embeddings)):
            raise ConfigError("non-finite codebook embeddings")
        if np.any(self.ema_counts < 0):
            raise ConfigError("negative EMA counts")

    @property
    def K(self) -> int:
        return self.embeddings.shape[0]

    @property
    def n_code(self) -> int:
        return self.embeddings.shape[1]

    def fingerprint(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.embeddings).tobytes()).hexdigest()


def _flatten_latents(latents, n_code: int):
    arr = np.asarray(latents, dtype=np.float64)
    if arr.shape[-1] != n_code:
        raise DimensionError(f"latent dim {arr.shape[-1]} != codebook dim {n_code}")
    return arr.reshape(-1, n_code), arr.shape[:-1]


def init_codebook_kmeans(latents, k: int, seed: int = 0, decay: float = 0.9,
                         expiry_threshold: float = 0.01) -> Codebook:
    """Codebook from k-means centroids of a batch of latents; EMA counts
    start at the cluster sizes."""
    flat = np.asarray(latents, dtype=np.float64).reshape(-1, np.shape(latents)[-1])
    if len(np.unique(flat, axis=0)) < k:
        raise InfeasibleError(f"need at least {k} distinct latent vectors")
    centroids, assign = kmeans(flat, k, seed=seed)
    counts = np.bincount(assign, minlength=k).astype(np.float64)
    return Codebook(
        embeddings=centroids,
        ema_counts=counts,
        ema_sums=counts[:, None] * centroids,
        decay=decay,
        expiry_threshold=expiry_threshold,
    )


def quantize(codebook: Codebook, latent):
    """Nearest-neighbor lookup under cosine similarity.

    Accepts any leading shape (..., n_code); returns integer tokens with
    that leading shape and z_q, the stored embeddings at those tokens.
    """
    flat, lead = _flatten_latents(latent, codebook.n_code)
    norms = np.linalg.norm(flat, axis=1)
    if np.any(norms == 0.0):
        raise DegenerateInputError("zero-norm latent vector under cosine lookup")
    emb_norms = np.linalg.norm(codebook.embeddings, axis=1)
    if np.any(emb_norms == 0.0):
        raise DegenerateInputError("zero-norm codebook embedding under cosine lookup")
    sims = (flat / norms[:, None]) @ (codebook.embeddings / emb_norms[:, None]).T
    tokens = np.argmax(sims, axis=1)  # first max -> lowest index on ties
    z_q = codebook.embeddings[tokens]
    return tokens.reshape(lead), z_q.reshape(lead + (codebook.n_code,))


def ema_update(codebook: Codebook, latents, tokens) -> Codebook:
    """Exponential moving average of per-code counts and sums; embeddings of
    codes unassigned in this batch are left untouched (counts still decay)."""
    flat, _ = _flatten_latents(latents, codebook.n_code)
    tok = np.asarray(tokens).reshape(-1)
    g = codebook.decay
    batch_counts = np.bincount(tok, minlength=codebook.K).astype(np.float64)
    batch_sums = np.zeros_like(codebook.ema_sums)
    np.add.at(batch_sums, tok, flat)
    counts = g * codebook.ema_counts + (1.0 - g) * batch_counts
    sums = g * codebook.ema_sums + (1.0 - g) * batch_sums
    embeddings = codebook.embeddings.copy()
    assigned = batch_counts > 0
    embeddings[assigned] = sums[assigned] / np.maximum(counts[assigned], EMA_EPS)[:, None]
    return replace(codebook, embeddings=embeddings, ema_counts=counts, ema_sums=sums)


def expire_stale(codebook: Codebook, current_batch_latents, seed) -> Codebook:
    """Replace every code whose EMA count fell below the expiry threshold
    with a seeded-random latent vector from the current batch."""
    flat, _ = _flatten_latents(current_batch_latents, codebook.n_code)
    if flat.shape[0] == 0:
        raise ConfigError("expire_stale needs a nonempty batch")
    stale = np.flatnonzero(codebook.ema_counts < codebook.expiry_threshold)
    if stale.size == 0:
        return codebook
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, flat.shape[0], size=stale.size)
    embeddings = codebook.embeddings.copy()
    counts = codebook.ema_counts.copy()
    sums = codebook.ema_sums.copy()
    embeddings[stale] = flat[picks]
    counts[stale] = 1.0
    sums[stale] = flat[picks]
    return replace(codebook, embeddings=embeddings, ema_counts=counts, ema_sums=sums)


def ortho_penalty(codebook: Codebook) -> float:
    """||Z_hat Z_hat^T - I||_F^2 / K^2 with row-l2-normalized embeddings."""
    norms = np.linalg.norm(codebook.embeddings, axis=1)
    if np.any(norms == 0.0):
        raise DegenerateInputError("zero-norm embedding row in ortho penalty")
    z_hat = codebook.embeddings / norms[:, None]
    gram = z_hat @ z_hat.T
    k = codebook.K
    return float(np.sum((gram - np.eye(k)) ** 2) / (k * k))


def codebook_usage(token_grids, k: int) -> float:
    """Fraction of the K codes that appear anywhere in the given grids."""
    if not token_grids:
        raise ConfigError("codebook_usage needs at least one token grid")
    seen = np.unique(np.concatenate([np.asarray(g).reshape(-1) for g in token_grids]))
    return float(len(seen)) / k


def compressed_bits(num_positions: int, k: int) -> int:
    """Storage cost of a token grid: positions times ceil(log2 K)."""
    if k < 2:
        raise ConfigError("K must be >= 2")
    return num_positions * math.ceil(math.log2(k))
