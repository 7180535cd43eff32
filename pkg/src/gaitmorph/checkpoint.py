"""Versioned binary model checkpoint.

Layout: magic ``GMCK``, u32 version, length-prefixed JSON model config,
then the parameter tensors in declaration order as little-endian float64,
then the codebook (K, n_code, decay, expiry threshold, embeddings, EMA
counts, EMA sums).
"""

from __future__ import annotations

import io
import json
import os
import struct

import numpy as np

from .data import atomic_write_bytes
from .errors import ConfigError, MalformedRecordError, VersionError
from .model import ModelConfig, init_params
from .quantizer import Codebook

MAGIC = b"GMCK"
VERSION = 1


def _write_array(buf, arr: np.ndarray) -> None:
    buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_array(buf, shape) -> np.ndarray:
    n = int(np.prod(shape)) if shape else 1
    raw = buf.read(8 * n)
    if len(raw) != 8 * n:
        raise MalformedRecordError("checkpoint truncated")
    return np.frombuffer(raw, dtype="<f8").reshape(shape).copy()


def save_checkpoint(path: str, cfg: ModelConfig, params: dict, codebook: Codebook) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    cfg_json = json.dumps(cfg.to_dict(), sort_keys=True).encode()
    buf.write(struct.pack("<I", len(cfg_json)))
    buf.write(cfg_json)
    for name in init_params(cfg):  # canonical declaration order
        _write_array(buf, params[name])
    buf.write(struct.pack("<II", codebook.K, codebook.n_code))
    buf.write(struct.pack("<dd", codebook.decay, codebook.expiry_threshold))
    _write_array(buf, codebook.embeddings)
    _write_array(buf, codebook.ema_counts)
    _write_array(buf, codebook.ema_sums)
    atomic_write_bytes(path, buf.getvalue())


def load_checkpoint(path: str):
    if not os.path.exists(path):
        raise ConfigError(f"checkpoint not found: {path}")
    with open(path, "rb") as f:
        buf = io.BytesIO(f.read())
    if buf.read(4) != MAGIC:
        raise VersionError(f"not a gaitmorph checkpoint: {path}")
    (version,) = struct.unpack("<I", buf.read(4))
    if version != VERSION:
        raise VersionError(f"unsupported checkpoint version {version}")
    (cfg_len,) = struct.unpack("<I", buf.read(4))
    try:
        cfg = ModelConfig.from_dict(json.loads(buf.read(cfg_len)))
    except (json.JSONDecodeError, KeyError) as e:
        raise MalformedRecordError(f"bad checkpoint config: {e}") from e
    template = init_params(cfg)
    params = {name: _read_array(buf, p.shape) for name, p in template.items()}
    k, n_code = struct.unpack("<II", buf.read(8))
    decay, expiry = struct.unpack("<dd", buf.read(16))
    codebook = Codebook(
        embeddings=_read_array(buf, (k, n_code)),
        ema_counts=_read_array(buf, (k,)),
        ema_sums=_read_array(buf, (k, n_code)),
        decay=decay,
        expiry_threshold=expiry,
    )
    return cfg, params, codebook
