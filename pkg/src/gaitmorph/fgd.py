"""Frechet Gait Distance.

Walk sets are embedded (here: the frozen encoder + quantizer with mean
pooling over the latent grid, so FGD values are NOT comparable to any
externally trained embedder), fitted with Gaussians, and compared with the
Frechet distance between Gaussians.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import SkeletonSequence
from .errors import DataError, DimensionError
from .model import ModelConfig, encode
from .numerics import sqrtm_psd
from .quantizer import Codebook, quantize

COV_EPS = 1e-6


@dataclass(frozen=True)
class GaussianStats:
    mean: np.ndarray       # (D,)
    covariance: np.ndarray  # (D, D), symmetric PSD
    sample_count: int


@dataclass(frozen=True)
class Embedder:
    params: dict
    cfg: ModelConfig
    codebook: Codebook

    @property
    def dim(self) -> int:
        return self.codebook.n_code


def embed_sequence(embedder: Embedder, seq) -> np.ndarray:
    """Encode, quantize, mean-pool the quantized grid over (T', J)."""
    frames = seq.frames if isinstance(seq, SkeletonSequence) else np.asarray(seq)
    _, z_q = quantize(embedder.codebook, encode(embedder.params, frames, embedder.cfg))
    return z_q.reshape(-1, embedder.dim).mean(axis=0)


def fit_gaussian(vectors) -> GaussianStats:
    """Sample mean and (N-1)-normalized covariance, regularized by eps*I."""
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[0] < 1 or x.size == 0:
        raise DataError("fit_gaussian needs at least one vector")
    n, d = x.shape
    mean = x.mean(axis=0)
    if n == 1:
        cov = np.zeros((d, d))
    else:
        centered = x - mean
        cov = centered.T @ centered / (n - 1)
        cov = 0.5 * (cov + cov.T)
    return GaussianStats(mean=mean, covariance=cov + COV_EPS * np.eye(d), sample_count=n)


def frechet_distance(p: GaussianStats, q: GaussianStats) -> float:
    """Squared Frechet distance between two Gaussians:
    ||m_p - m_q||^2 + Tr(C_p + C_q - 2 (C_p C_q)^(1/2)).

    The trace term is computed through the symmetric product
    (C_p^(1/2) C_q C_p^(1/2))^(1/2) for stability.
    """
    if p.mean.shape != q.mean.shape:
        raise DimensionError(f"dimension mismatch {p.mean.shape} vs {q.mean.shape}")
    dm = p.mean - q.mean
    s = sqrtm_psd(p.covariance)
    cross = sqrtm_psd(s @ q.covariance @ s)
    d2 = float(dm @ dm + np.trace(p.covariance) + np.trace(q.covariance)
               - 2.0 * np.trace(cross))
    if -1e-8 < d2 < 0.0:
        d2 = 0.0
    return d2


def compute_fgd(embedder: Embedder, set_a, set_b) -> float:
    """FGD between two walk sets under the substituted embedder."""
    if not set_a or not set_b:
        raise DataError("compute_fgd needs two nonempty sequence sets")
    ga = fit_gaussian([embed_sequence(embedder, s) for s in set_a])
    gb = fit_gaussian([embed_sequence(embedder, s) for s in set_b])
    return frechet_distance(ga, gb)
