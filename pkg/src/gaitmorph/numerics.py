"""Dense linear-algebra and clustering primitives.

Everything here is pure and deterministic. Matrices are plain float64
numpy arrays; nothing is sparse and nothing is large (a few hundred square
at most), so a cyclic Jacobi eigensolver is plenty.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import DegenerateInputError, DimensionError, InfeasibleError, NotPSDError


class EigDecomposition(NamedTuple):
    eigenvalues: np.ndarray  # ascending, shape (n,)
    eigenvectors: np.ndarray  # orthonormal columns, shape (n, n)


def _check_symmetric(a: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {a.shape}")
    if a.size and np.max(np.abs(a - a.T)) > tol:
        raise DimensionError("matrix is not symmetric within 1e-9")
    return a


def sym_eig(a: np.ndarray) -> EigDecomposition:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns eigenvalues in ascending order with matching orthonormal
    eigenvector columns. Deterministic: fixed sweep order, stable sort.
    """
    a = _check_symmetric(a)
    n = a.shape[0]
    m = a.copy()
    v = np.eye(n)
    for _ in range(100):  # sweeps; tiny matrices converge in a handful
        off = np.sqrt(np.sum(np.tril(m, -1) ** 2))
        if off < 1e-14 * max(1.0, np.max(np.abs(np.diag(m)))):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = m[p, q]
                if abs(apq) < 1e-300:
                    continue
                theta = (m[q, q] - m[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rp, rq = m[p, :].copy(), m[q, :].copy()
                m[p, :] = c * rp - s * rq
                m[q, :] = s * rp + c * rq
                cp, cq = m[:, p].copy(), m[:, q].copy()
                m[:, p] = c * cp - s * cq
                m[:, q] = s * cp + c * cq
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    w = np.diag(m).copy()
    order = np.argsort(w, kind="stable")
    w = w[order]
    v = v[:, order]
    # fix signs so repeated runs (and permuted inputs) agree
    for j in range(n):
        k = int(np.argmax(np.abs(v[:, j])))
        if v[k, j] < 0:
            v[:, j] = -v[:, j]
    return EigDecomposition(w, v)


def sqrtm_psd(a: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    Small negative eigenvalues (> -1e-6) are clamped to zero, as is
    standard for near-singular covariances; anything more negative is a
    genuine error.
    """
    w, v = sym_eig(a)
    scale = max(1.0, float(np.max(np.abs(w))))
    if np.min(w) < -1e-6 * scale:
        raise NotPSDError(f"matrix has negative eigenvalue {np.min(w):.3e}")
    w = np.clip(w, 0.0, None)
    s = (v * np.sqrt(w)) @ v.T
    return 0.5 * (s + s.T)


def kmeans(points, k: int, iters: int = 25, seed: int = 0):
    """Plain Lloyd's k-means, deterministic given the seed.

    Initial centroids are a seeded random choice of k distinct points.
    Ties in assignment go to the lowest centroid index. Returns
    (centroids (k, d), assignments (n,)).
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.size == 0:
        raise InfeasibleError("kmeans needs at least one point")
    distinct = np.unique(pts, axis=0)
    if k > len(distinct):
        raise InfeasibleError(f"k={k} exceeds {len(distinct)} distinct points")
    rng = np.random.default_rng(seed)
    centroids = distinct[rng.choice(len(distinct), size=k, replace=False)].copy()
    assign = np.full(len(pts), -1, dtype=np.int64)
    for _ in range(max(1, iters)):
        d2 = np.sum((pts[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        new_assign = np.argmin(d2, axis=1)  # argmin -> lowest index on ties
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            mask = assign == j
            if np.any(mask):
                centroids[j] = pts[mask].mean(axis=0)
    return centroids, assign


def kmeans_inertia(points, centroids, assignments) -> float:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    c = np.asarray(centroids, dtype=np.float64)
    return float(np.sum((pts - c[np.asarray(assignments)]) ** 2))


def pairwise_distances(a, b, metric: str = "euclidean") -> np.ndarray:
    """Pairwise distance matrix between two stacks of vectors.

    metric 'euclidean' or 'cosine' (cosine distance = 1 - cosine similarity;
    zero vectors are rejected under cosine).
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"vector dims differ: {a.shape[1]} vs {b.shape[1]}")
    if metric == "euclidean":
        diff = a[:, None, :] - b[None, :, :]
        return np.sqrt(np.sum(diff * diff, axis=2))
    if metric == "cosine":
        na = np.linalg.norm(a, axis=1)
        nb = np.linalg.norm(b, axis=1)
        if np.any(na == 0.0) or np.any(nb == 0.0):
            raise DegenerateInputError("zero vector under cosine metric")
        sim = (a / na[:, None]) @ (b / nb[:, None]).T
        return 1.0 - sim
    raise DimensionError(f"unknown metric {metric!r}")
