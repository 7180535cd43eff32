"""Skeleton-sequence data model, synthetic walk generator and augmentations.

Sequences are (T, J, 2) float64 arrays of 2-D joint coordinates. The
default J=18 layout follows the usual COCO ordering (nose, neck, then
right/left arm, right/left leg, face); any other J falls back to a simple
vertical chain so that tiny test configurations still work.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    ConfigError,
    DataError,
    DegenerateInputError,
    MalformedRecordError,
    VersionError,
)

DATASET_FORMAT = "gaitmorph-ds"
DATASET_VERSION = 1

# COCO-18 ordering: 0 nose, 1 neck, 2-4 right arm, 5-7 left arm,
# 8-10 right leg, 11-13 left leg, 14/15 eyes, 16/17 ears.
COCO18_SWAP_PAIRS = [(2, 5), (3, 6), (4, 7), (8, 11), (9, 12), (10, 13), (14, 15), (16, 17)]

PACE_MULTIPLIERS = (0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0)


@dataclass(frozen=True)
class VariationLabel:
    kind: str = "NM"  # NM | CL | BG | custom
    viewpoint_deg: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "viewpoint_deg", float(self.viewpoint_deg) % 360.0)

    def key(self) -> str:
        return f"{self.kind}-{self.viewpoint_deg:g}"


@dataclass
class SkeletonSequence:
    frames: np.ndarray  # (T, J, 2)
    subject_id: int = 0
    variation: VariationLabel = field(default_factory=VariationLabel)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3 or self.frames.shape[2] != 2:
            raise ConfigError(f"frames must be (T, J, 2), got {self.frames.shape}")
        t, j = self.frames.shape[:2]
        if t < 8 or t % 4 != 0:
            raise ConfigError(f"T={t} must be >= 8 and divisible by 4")
        if j < 2:
            raise ConfigError(f"J={j} must be >= 2")
        if not np.all(np.isfinite(self.frames)):
            raise ConfigError("non-finite coordinates in sequence")

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def J(self) -> int:
        return self.frames.shape[1]


@dataclass
class Dataset:
    sequences: list
    split: str = "train"

    def __post_init__(self):
        if not self.sequences:
            raise DataError("dataset must contain at least one sequence")
        t, j = self.sequences[0].T, self.sequences[0].J
        for s in self.sequences:
            if (s.T, s.J) != (t, j):
                raise ConfigError("inconsistent T/J across sequences")

    @property
    def T(self) -> int:
        return self.sequences[0].T

    @property
    def J(self) -> int:
        return self.sequences[0].J

    def filter(self, variation: VariationLabel) -> list:
        return [s for s in self.sequences if s.variation == variation]


def swap_pairs_for(num_joints: int):
    return list(COCO18_SWAP_PAIRS) if num_joints == 18 else []


def midhip(frames: np.ndarray) -> np.ndarray:
    """Per-frame pelvis anchor: midpoint of the hips for the 18-joint layout,
    the middle chain joint otherwise. Returns (T, 2)."""
    j = frames.shape[1]
    if j == 18:
        return 0.5 * (frames[:, 8, :] + frames[:, 11, :])
    return frames[:, j // 2, :]


def neck(frames: np.ndarray) -> np.ndarray:
    return frames[:, 1, :]


# ---------------------------------------------------------------------------
# synthetic generator


@dataclass(frozen=True)
class GeneratorConfig:
    subjects: int = 2
    walks_per_variation: int = 2
    variations: tuple = (VariationLabel("NM", 0.0),)
    T: int = 64
    J: int = 18
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.subjects < 1:
            raise ConfigError("subjects must be >= 1")
        if self.T % 4 != 0 or self.T < 8:
            raise ConfigError(f"T={self.T} must be >= 8 and divisible by 4")
        object.__setattr__(self, "variations", tuple(self.variations))


def _rest_pose_3d(num_joints: int) -> np.ndarray:
    """Canonical standing figure in 3-D (x lateral, y up, z walking axis),
    units of one torso length. Right side sits at negative x."""
    if num_joints == 18:
        p = np.zeros((18, 3))
        p[0] = (0.00, 1.15, 0.05)   # nose
        p[1] = (0.00, 1.00, 0.00)   # neck
        p[2] = (-0.22, 0.95, 0.00)  # r shoulder
        p[3] = (-0.26, 0.62, 0.00)  # r elbow
        p[4] = (-0.28, 0.34, 0.00)  # r wrist
        p[5] = (0.22, 0.95, 0.00)   # l shoulder
        p[6] = (0.26, 0.62, 0.00)   # l elbow
        p[7] = (0.28, 0.34, 0.00)   # l wrist
        p[8] = (-0.12, 0.00, 0.00)  # r hip
        p[9] = (-0.13, -0.52, 0.00) # r knee
        p[10] = (-0.14, -1.02, 0.00)  # r ankle
        p[11] = (0.12, 0.00, 0.00)  # l hip
        p[12] = (0.13, -0.52, 0.00) # l knee
        p[13] = (0.14, -1.02, 0.00) # l ankle
        p[14] = (-0.04, 1.19, 0.04) # r eye
        p[15] = (0.04, 1.19, 0.04)  # l eye
        p[16] = (-0.08, 1.16, 0.00) # r ear
        p[17] = (0.08, 1.16, 0.00)  # l ear
        return p
    # generic vertical chain, joint 1 as neck, joint J//2 as pelvis
    ys = np.linspace(1.0, -1.0, num_joints)
    p = np.zeros((num_joints, 3))
    p[:, 1] = ys
    return p


# (joint index, z amplitude factor, phase offset) for the swinging limbs
_LIMB_SWING_18 = [
    (9, 0.6, 0.0), (10, 1.0, 0.0),        # right leg
    (12, 0.6, math.pi), (13, 1.0, math.pi),  # left leg
    (3, 0.45, math.pi), (4, 0.8, math.pi),   # right arm, anti-phase with leg
    (6, 0.45, 0.0), (7, 0.8, 0.0),           # left arm
]


def _damping(kind: str) -> float:
    if kind == "CL":
        return 0.8
    if kind == "BG":
        return 0.9
    return 1.0


def _walk_frames(cfg: GeneratorConfig, freq, amp, phase, var: VariationLabel, noise_rng) -> np.ndarray:
    rest = _rest_pose_3d(cfg.J)
    t = np.arange(cfg.T)
    ph = 2.0 * math.pi * freq * t / cfg.T + phase
    amp = amp * _damping(var.kind)
    pose = np.repeat(rest[None, :, :], cfg.T, axis=0)  # (T, J, 3)
    if cfg.J == 18:
        for j, factor, off in _LIMB_SWING_18:
            swing = np.sin(ph + off)
            pose[:, j, 2] += amp * factor * swing
            # in-plane components so motion is visible from every viewpoint:
            # the swinging limb also lifts (y) and sways laterally (x)
            pose[:, j, 1] += 0.8 * amp * factor * np.maximum(0.0, swing)
            pose[:, j, 0] += 0.3 * amp * factor * np.sign(rest[j, 0] if rest[j, 0] else 1.0) * swing
        # vertical bob at double the stride frequency, lateral body sway at single
        pose[:, :, 1] += 0.15 * amp * np.sin(2.0 * ph)[:, None]
        pose[:, :, 0] += 0.12 * amp * np.sin(ph)[:, None]
    else:
        hip = cfg.J // 2
        for j in range(hip + 1, cfg.J):
            depth = (j - hip) / max(1, cfg.J - 1 - hip)
            off = 0.0 if (j - hip) % 2 == 1 else math.pi
            pose[:, j, 2] += amp * depth * np.sin(ph + off)
    theta = math.radians(var.viewpoint_deg)
    x2d = pose[:, :, 0] * math.cos(theta) + pose[:, :, 2] * math.sin(theta)
    frames = np.stack([x2d, pose[:, :, 1]], axis=2)
    if cfg.noise_std > 0:
        frames = frames + noise_rng.normal(0.0, cfg.noise_std, size=frames.shape)
    return frames


def generate_dataset(cfg: GeneratorConfig, split: str = "train") -> Dataset:
    """Deterministic synthetic gait dataset.

    Per-subject stride frequency/amplitude and per-walk phase are drawn from
    RNG streams keyed by (seed, subject, variation index, walk) so the same
    subject walks the same way under every variation.
    """
    sequences = []
    for s in range(cfg.subjects):
        srng = np.random.default_rng([cfg.seed, s])
        freq = srng.uniform(0.8, 1.2)
        amp = srng.uniform(0.2, 0.4)
        for vi, var in enumerate(cfg.variations):
            for w in range(cfg.walks_per_variation):
                wrng = np.random.default_rng([cfg.seed, s, vi, w])
                phase = wrng.uniform(0.0, 2.0 * math.pi)
                frames = _walk_frames(cfg, freq, amp, phase, var, wrng)
                sequences.append(SkeletonSequence(frames, subject_id=s, variation=var))
    return Dataset(sequences, split=split)


# ---------------------------------------------------------------------------
# normalization and augmentation


def normalize(seq: SkeletonSequence) -> SkeletonSequence:
    """Center every frame at the pelvis and rescale so the mean torso
    (pelvis to neck) length over the sequence equals 1."""
    frames = seq.frames - midhip(seq.frames)[:, None, :]
    torso = np.linalg.norm(neck(frames) - midhip(frames), axis=1)
    if np.any(torso <= 1e-6):
        raise DegenerateInputError("degenerate torso length in at least one frame")
    frames = frames / torso.mean()
    return replace(seq, frames=frames)


def augment(seq: SkeletonSequence, kind: str, params: dict | None = None, seed: int = 0) -> SkeletonSequence:
    """One of the heuristic augmentations: random_pace, joint_noise,
    point_noise, mirror, reverse."""
    params = dict(params or {})
    frames = seq.frames
    t_len, j_len = frames.shape[:2]
    if kind == "random_pace":
        mult = params.get("multiplier")
        if mult is None:
            mult = PACE_MULTIPLIERS[np.random.default_rng(seed).integers(len(PACE_MULTIPLIERS))]
        if mult not in PACE_MULTIPLIERS:
            raise ConfigError(f"pace multiplier {mult} not in {PACE_MULTIPLIERS}")
        length = int(round(mult * t_len))
        t_src = np.linspace(0.0, t_len - 1, length)
        flat = frames.reshape(t_len, -1)
        resampled = np.empty((length, flat.shape[1]))
        for c in range(flat.shape[1]):
            resampled[:, c] = np.interp(t_src, np.arange(t_len), flat[:, c])
        if length >= t_len:
            out = resampled[:t_len]
        else:
            reps = int(np.ceil(t_len / length))
            out = np.tile(resampled, (reps, 1))[:t_len]
        return replace(seq, frames=out.reshape(t_len, j_len, 2))
    if kind == "mirror":
        out = frames.copy()
        out[:, :, 0] = -out[:, :, 0]
        for a, b in swap_pairs_for(j_len):
            out[:, [a, b], :] = out[:, [b, a], :]
        return replace(seq, frames=out)
    if kind == "reverse":
        return replace(seq, frames=frames[::-1].copy())
    if kind in ("joint_noise", "point_noise"):
        std = float(params.get("std", 0.001))
        rng = np.random.default_rng(seed)
        if kind == "joint_noise":
            noise = np.broadcast_to(rng.normal(0.0, std, size=(1, j_len, 2)), frames.shape)
        else:
            noise = rng.normal(0.0, std, size=frames.shape)
        return replace(seq, frames=frames + noise)
    raise ConfigError(f"unknown augmentation kind {kind!r}")


# ---------------------------------------------------------------------------
# file I/O (versioned JSON lines; floats round-trip bit-exactly via repr)


def atomic_write_bytes(path: str, payload: bytes) -> None:
    d = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-gaitmorph-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def save_dataset(ds: Dataset, path: str) -> None:
    lines = [json.dumps({"format": DATASET_FORMAT, "version": DATASET_VERSION,
                         "T": ds.T, "J": ds.J})]
    for s in ds.sequences:
        lines.append(json.dumps({
            "subject": s.subject_id,
            "kind": s.variation.kind,
            "viewpoint": s.variation.viewpoint_deg,
            "frames": s.frames.tolist(),
        }))
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode())


def load_dataset(path: str, split: str = "train") -> Dataset:
    if not os.path.exists(path):
        raise DataError(f"dataset file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        raw = [ln for ln in f.read().splitlines() if ln.strip()]
    if not raw:
        raise MalformedRecordError(f"empty dataset file: {path}")
    try:
        header = json.loads(raw[0])
    except json.JSONDecodeError as e:
        raise MalformedRecordError(f"bad header line: {e}") from e
    if header.get("format") != DATASET_FORMAT:
        raise VersionError(f"not a {DATASET_FORMAT} file: {path}")
    if header.get("version") != DATASET_VERSION:
        raise VersionError(f"unsupported dataset version {header.get('version')}")
    t_len, j_len = header.get("T"), header.get("J")
    sequences = []
    for i, ln in enumerate(raw[1:], start=2):
        try:
            rec = json.loads(ln)
            frames = np.array(rec["frames"], dtype=np.float64)
            var = VariationLabel(rec["kind"], rec["viewpoint"])
            seq = SkeletonSequence(frames, subject_id=int(rec["subject"]), variation=var)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError, ConfigError) as e:
            raise MalformedRecordError(f"bad record at line {i}: {e}") from e
        if seq.T != t_len or seq.J != j_len:
            raise MalformedRecordError(f"record at line {i} has shape {seq.frames.shape}, "
                                       f"header says T={t_len} J={j_len}")
        sequences.append(seq)
    if not sequences:
        raise MalformedRecordError(f"dataset file has a header but no sequences: {path}")
    return Dataset(sequences, split=split)
