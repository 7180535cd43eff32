"""Optimal transport over token histograms.

Per-position token histograms are matched by an exact Earth Mover's
Distance solver (successive shortest augmenting paths on the bipartite
transportation graph, with masses lifted to integers over a common
denominator). One coupling per latent position forms a TransportMapSet;
applying it remaps each token along its row-argmax and decodes the result.
"""

from __future__ import annotations

import io
import json
import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .data import SkeletonSequence, VariationLabel, atomic_write_bytes
from .errors import (
    ArtifactMismatchError,
    ConfigError,
    DataError,
    InfeasibleError,
    MalformedRecordError,
    VersionError,
)
from .model import ModelConfig, decode, encode
from .numerics import pairwise_distances
from .quantizer import Codebook, quantize

MAP_MAGIC = b"GMTM"
MAP_VERSION = 1


def num_threads() -> int:
    try:
        return max(1, int(os.environ.get("GAITMORPH_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class TransportMap:
    coupling: np.ndarray  # (K, K), nonnegative, marginals = (a, b)
    cost: float


@dataclass(frozen=True)
class TransportMapSet:
    maps: tuple  # one TransportMap per latent position, length t_latent * J
    source: VariationLabel
    target: VariationLabel
    t_latent: int
    J: int
    K: int
    codebook_fingerprint: str

    def __post_init__(self):
        if len(self.maps) != self.t_latent * self.J:
            raise ConfigError(
                f"expected {self.t_latent * self.J} maps, got {len(self.maps)}")


def build_position_histograms(token_grids, position: int, k: int) -> np.ndarray:
    """Histogram of the tokens observed at one flattened latent position
    across all grids. Normalized to sum 1."""
    if not token_grids:
        raise ConfigError("need at least one token grid")
    tokens = np.array([np.asarray(g).reshape(-1)[position] for g in token_grids])
    hist = np.bincount(tokens, minlength=k).astype(np.float64)
    return hist / len(token_grids)


def cost_matrix(codebook: Codebook) -> np.ndarray:
    """Euclidean distances between codebook embeddings."""
    return pairwise_distances(codebook.embeddings, codebook.embeddings, "euclidean")


# ---------------------------------------------------------------------------
# exact EMD


def _integerize(a: np.ndarray, b: np.ndarray, denominator):
    """Lift two histograms to integer masses over a common denominator."""
    if denominator is None:
        denom = 1
        for x in np.concatenate([a, b]):
            denom = math.lcm(denom, Fraction(float(x)).limit_denominator(10 ** 6).denominator)
            if denom > 10 ** 7:
                break
        denominator = denom
    if denominator > 10 ** 7:
        # no small exact denominator: apportion by largest remainder
        denominator = 1 << 20
        def apportion(h):
            raw = h * denominator
            base = np.floor(raw).astype(np.int64)
            short = int(round(raw.sum())) - int(base.sum())
            order = np.argsort(-(raw - base), kind="stable")
            base[order[:short]] += 1
            return base
        return apportion(a), apportion(b), denominator
    ai = np.rint(a * denominator).astype(np.int64)
    bi = np.rint(b * denominator).astype(np.int64)
    return ai, bi, denominator


def solve_emd(a, b, c, denominator=None) -> TransportMap:
    """Exact optimal transport between two histograms under cost matrix c.

    Successive shortest augmenting paths with node potentials (Dijkstra on
    reduced costs). Deterministic: fixed scan order, lowest-index ties.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    n = len(a)
    if len(b) != n or c.shape != (n, n):
        raise ConfigError(f"inconsistent sizes: |a|={len(a)}, |b|={len(b)}, C={c.shape}")
    if np.any(a < 0) or np.any(b < 0) or np.any(c < 0):
        raise ConfigError("histograms and costs must be nonnegative")
    if abs(a.sum() - b.sum()) > 1e-9:
        raise InfeasibleError(f"marginal mass mismatch: {a.sum()} vs {b.sum()}")

    ai, bi, denom = _integerize(a, b, denominator)
    if ai.sum() != bi.sum():
        # rounding drift: repair on the largest entry
        diff = int(ai.sum() - bi.sum())
        bi[int(np.argmax(bi))] += diff
    supply = ai.copy()
    demand = bi.copy()
    flow = np.zeros((n, n), dtype=np.int64)
    pi = np.zeros(2 * n)  # node potentials, sources then sinks
    inf = float("inf")

    while supply.sum() > 0:
        dist = np.full(2 * n, inf)
        parent = np.full(2 * n, -1, dtype=np.int64)
        done = np.zeros(2 * n, dtype=bool)
        dist[:n][supply > 0] = 0.0
        for _ in range(2 * n):
            u = -1
            best = inf
            for v in range(2 * n):
                if not done[v] and dist[v] < best:
                    best, u = dist[v], v
            if u < 0:
                break
            done[u] = True
            if u < n:  # source -> every sink
                rc = c[u] + pi[u] - pi[n:]
                for j in range(n):
                    nd = dist[u] + rc[j]
                    if nd < dist[n + j] - 1e-15:
                        dist[n + j] = nd
                        parent[n + j] = u
            else:  # sink -> sources with positive flow (residual arcs)
                j = u - n
                for i in range(n):
                    if flow[i, j] > 0:
                        nd = dist[u] - c[i, j] + pi[u] - pi[i]
                        if nd < dist[i] - 1e-15:
                            dist[i] = nd
                            parent[i] = u
        sinks = [j for j in range(n) if demand[j] > 0 and dist[n + j] < inf]
        if not sinks:
            raise InfeasibleError("transportation instance disconnected")
        t = min(sinks, key=lambda j: (dist[n + j], j))
        reachable = dist < inf
        pi[reachable] += np.minimum(dist[reachable], dist[n + t])

        # trace path, find bottleneck, augment
        path = []
        node = n + t
        while parent[node] >= 0:
            path.append((parent[node], node))
            node = parent[node]
        path.reverse()
        bottleneck = min(supply[node], demand[t])
        for u, v in path:
            if u >= n:  # residual arc sink->source
                bottleneck = min(bottleneck, flow[v, u - n])
        for u, v in path:
            if u < n:
                flow[u, v - n] += bottleneck
            else:
                flow[v, u - n] -= bottleneck
        supply[node] -= bottleneck
        demand[t] -= bottleneck

    coupling = flow.astype(np.float64) / denom
    return TransportMap(coupling=coupling, cost=float(np.sum(coupling * c)))


# ---------------------------------------------------------------------------
# map learning / application


def tokenize_sequences(params, cfg: ModelConfig, codebook: Codebook, seqs):
    """Encode + quantize a list of sequences into (T', J) token grids."""
    grids = []
    for s in seqs:
        frames = s.frames if isinstance(s, SkeletonSequence) else np.asarray(s)
        tokens, _ = quantize(codebook, encode(params, frames, cfg))
        grids.append(tokens)
    return grids


def learn_transport_maps(params, cfg: ModelConfig, codebook: Codebook,
                         source_seqs, target_seqs,
                         source_label=None, target_label=None) -> TransportMapSet:
    """One exact EMD coupling per latent position between the source and
    target token distributions."""
    if not source_seqs or not target_seqs:
        raise DataError("source and target sets must be nonempty")
    src_grids = tokenize_sequences(params, cfg, codebook, source_seqs)
    tgt_grids = tokenize_sequences(params, cfg, codebook, target_seqs)
    c = cost_matrix(codebook)
    denom = math.lcm(len(src_grids), len(tgt_grids))
    n_pos = cfg.t_latent * cfg.J

    def solve(j):
        a = build_position_histograms(src_grids, j, codebook.K)
        b = build_position_histograms(tgt_grids, j, codebook.K)
        return solve_emd(a, b, c, denominator=denom)

    workers = num_threads()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            maps = tuple(ex.map(solve, range(n_pos)))
    else:
        maps = tuple(solve(j) for j in range(n_pos))

    def label_of(seqs, given):
        if given is not None:
            return given
        return seqs[0].variation if isinstance(seqs[0], SkeletonSequence) else VariationLabel()

    return TransportMapSet(
        maps=maps,
        source=label_of(source_seqs, source_label),
        target=label_of(target_seqs, target_label),
        t_latent=cfg.t_latent,
        J=cfg.J,
        K=codebook.K,
        codebook_fingerprint=codebook.fingerprint(),
    )


def remap_tokens(map_set: TransportMapSet, tokens: np.ndarray) -> np.ndarray:
    """Move each token along the row-argmax of its position's coupling.
    Tokens with an all-zero coupling row (never seen at that position in the
    source set) pass through unchanged."""
    flat = np.asarray(tokens).reshape(-1).copy()
    for j, tm in enumerate(map_set.maps):
        row = tm.coupling[flat[j]]
        if row.sum() > 0.0:
            flat[j] = int(np.argmax(row))  # first max -> lowest index
    return flat.reshape(np.asarray(tokens).shape)


def apply_transport_morph(params, cfg: ModelConfig, codebook: Codebook,
                          map_set: TransportMapSet, seq) -> SkeletonSequence:
    """Morph one sequence: tokenize, remap through the transport maps,
    decode."""
    if map_set.codebook_fingerprint != codebook.fingerprint():
        raise ArtifactMismatchError("transport maps were learned with a different codebook")
    frames = seq.frames if isinstance(seq, SkeletonSequence) else np.asarray(seq)
    tokens, _ = quantize(codebook, encode(params, frames, cfg))
    remapped = remap_tokens(map_set, tokens)
    z_q = codebook.embeddings[remapped]
    out = decode(params, z_q, cfg)
    subject = seq.subject_id if isinstance(seq, SkeletonSequence) else 0
    return SkeletonSequence(out, subject_id=subject, variation=map_set.target)


def transport_stats(map_set: TransportMapSet, source_token_grids, codebook: Codebook) -> dict:
    """Number of changed tokens, mean per-change cost and total mass moved
    over a set of source token grids."""
    c = cost_matrix(codebook)
    changes = 0
    moved = 0.0
    total = 0
    for grid in source_token_grids:
        flat = np.asarray(grid).reshape(-1)
        remapped = remap_tokens(map_set, flat)
        total += flat.size
        for k, l in zip(flat, remapped.reshape(-1)):
            if k != l:
                changes += 1
                moved += c[k, l]
    avg = moved / changes if changes else 0.0
    return {
        "num_changes": changes,
        "avg_moved_distance": avg,
        "total_mass": changes * avg,
        "num_tokens": total,
    }


# ---------------------------------------------------------------------------
# map file I/O


def save_transport_maps(map_set: TransportMapSet, path: str) -> None:
    buf = io.BytesIO()
    buf.write(MAP_MAGIC)
    buf.write(struct.pack("<I", MAP_VERSION))
    header = json.dumps({
        "source_kind": map_set.source.kind,
        "source_viewpoint": map_set.source.viewpoint_deg,
        "target_kind": map_set.target.kind,
        "target_viewpoint": map_set.target.viewpoint_deg,
        "t_latent": map_set.t_latent,
        "J": map_set.J,
        "K": map_set.K,
        "fingerprint": map_set.codebook_fingerprint,
    }, sort_keys=True).encode()
    buf.write(struct.pack("<I", len(header)))
    buf.write(header)
    for tm in map_set.maps:
        rows, cols = np.nonzero(tm.coupling)
        buf.write(struct.pack("<Id", len(rows), tm.cost))
        triples = np.empty((len(rows), 3))
        triples[:, 0] = rows
        triples[:, 1] = cols
        triples[:, 2] = tm.coupling[rows, cols]
        buf.write(np.ascontiguousarray(triples, dtype="<f8").tobytes())
    atomic_write_bytes(path, buf.getvalue())


def load_transport_maps(path: str) -> TransportMapSet:
    if not os.path.exists(path):
        raise ConfigError(f"transport map file not found: {path}")
    with open(path, "rb") as f:
        buf = io.BytesIO(f.read())
    if buf.read(4) != MAP_MAGIC:
        raise VersionError(f"not a gaitmorph transport map file: {path}")
    (version,) = struct.unpack("<I", buf.read(4))
    if version != MAP_VERSION:
        raise VersionError(f"unsupported transport map version {version}")
    (hlen,) = struct.unpack("<I", buf.read(4))
    try:
        header = json.loads(buf.read(hlen))
        t_latent, j, k = header["t_latent"], header["J"], header["K"]
    except (json.JSONDecodeError, KeyError) as e:
        raise MalformedRecordError(f"bad transport map header: {e}") from e
    maps = []
    for _ in range(t_latent * j):
        raw = buf.read(12)
        if len(raw) != 12:
            raise MalformedRecordError("transport map file truncated")
        nnz, cost = struct.unpack("<Id", raw)
        data = buf.read(24 * nnz)
        if len(data) != 24 * nnz:
            raise MalformedRecordError("transport map file truncated")
        triples = np.frombuffer(data, dtype="<f8").reshape(nnz, 3)
        coupling = np.zeros((k, k))
        coupling[triples[:, 0].astype(int), triples[:, 1].astype(int)] = triples[:, 2]
        maps.append(TransportMap(coupling=coupling, cost=cost))
    return TransportMapSet(
        maps=tuple(maps),
        source=VariationLabel(header["source_kind"], header["source_viewpoint"]),
        target=VariationLabel(header["target_kind"], header["target_viewpoint"]),
        t_latent=t_latent,
        J=j,
        K=k,
        codebook_fingerprint=header["fingerprint"],
    )
