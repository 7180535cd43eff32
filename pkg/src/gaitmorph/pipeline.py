"""High-level pipeline operations behind the service endpoints.

Each function takes plain keyword arguments (already validated by the
pydantic schemas), touches the filesystem only through atomic writes, and
returns a JSON-serializable report. Sequences are normalized (pelvis
centering, unit mean torso) before any model pass.
"""

from __future__ import annotations

import json
import os

import numpy as np

from . import fgd as fgd_mod
from . import quantizer as q
from . import transport as tr
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    Dataset,
    GeneratorConfig,
    VariationLabel,
    atomic_write_bytes,
    generate_dataset,
    load_dataset,
    normalize,
    save_dataset,
)
from .errors import ConfigError, DataError
from .model import ModelConfig, encode, new_train_state, skeleton_adjacency, train_step


def _require_file(path: str, what: str) -> None:
    if not path or not os.path.exists(path):
        raise ConfigError(f"{what} does not exist: {path!r}")


def _require_writable(path: str, what: str) -> None:
    parent = os.path.dirname(os.path.abspath(path)) or "."
    if not os.path.isdir(parent):
        raise ConfigError(f"directory for {what} does not exist: {parent!r}")


def _normalized(ds: Dataset):
    return [normalize(s) for s in ds.sequences]


def _select(seqs, label: VariationLabel, what: str):
    out = [s for s in seqs if s.variation == label]
    if not out:
        raise DataError(f"no sequences for {what} variation {label.key()}")
    return out


def run_gen(*, out_path, split, subjects, walks_per_variation, variations,
            T, J, noise_std, seed) -> dict:
    _require_writable(out_path, "output dataset")
    cfg = GeneratorConfig(
        subjects=subjects,
        walks_per_variation=walks_per_variation,
        variations=tuple(VariationLabel(v["kind"], v["viewpoint_deg"]) for v in variations),
        T=T, J=J, noise_std=noise_std, seed=seed,
    )
    ds = generate_dataset(cfg, split=split)
    save_dataset(ds, out_path)
    return {"path": out_path, "num_sequences": len(ds.sequences), "T": ds.T, "J": ds.J}


def _eval_recon(params, cfg, codebook, x, a_pow):
    from .model import decode, smooth_l1
    from .quantizer import quantize

    z_e = encode(params, x, cfg)
    _, z_q = quantize(codebook, z_e)
    loss, _ = smooth_l1(decode(params, z_q, cfg), x)
    return loss


def run_train(*, dataset_path, checkpoint_out, metrics_out, model, K, steps,
              batch_size, seed, log_interval, commit_weight, ortho_weight,
              lr_min, lr_max, cycle_len, weight_decay, kmeans_init_sequences=16) -> dict:
    _require_file(dataset_path, "dataset")
    _require_writable(checkpoint_out, "checkpoint")
    _require_writable(metrics_out, "metrics file")
    ds = load_dataset(dataset_path, split="train")
    cfg = ModelConfig(**model)
    if (ds.T, ds.J) != (cfg.T, cfg.J):
        raise ConfigError(f"dataset is {ds.T}x{ds.J}, model expects {cfg.T}x{cfg.J}")
    x_all = np.stack([s.frames for s in _normalized(ds)])
    a_pow = skeleton_adjacency(cfg.J, cfg.adjacency_scales)

    state = new_train_state(
        cfg, lr_min=lr_min, lr_max=lr_max, cycle_len=cycle_len,
        weight_decay=weight_decay, commit_weight=commit_weight,
        ortho_weight=ortho_weight)
    warm = x_all[:min(len(x_all), kmeans_init_sequences)]
    codebook = q.init_codebook_kmeans(encode(state.params, warm, cfg), K, seed=seed)

    rng = np.random.default_rng(seed)
    initial_recon = _eval_recon(state.params, cfg, codebook, x_all, a_pow)
    lines = []
    metrics = {}
    for _ in range(steps):
        idx = rng.integers(0, len(x_all), size=min(batch_size, len(x_all)))
        codebook, metrics = train_step(state, codebook, x_all[idx], a_pow=a_pow)
        if state.step % log_interval == 0 or state.step == steps:
            lines.append(json.dumps({k: (float(v) if isinstance(v, (int, float, np.floating)) else v)
                                     for k, v in metrics.items()}))
    final_recon = _eval_recon(state.params, cfg, codebook, x_all, a_pow)
    atomic_write_bytes(metrics_out, ("\n".join(lines) + "\n").encode())
    save_checkpoint(checkpoint_out, cfg, state.params, codebook)
    return {
        "checkpoint": checkpoint_out,
        "metrics": metrics_out,
        "steps": steps,
        "initial_recon_loss": float(initial_recon),
        "final_recon_loss": float(final_recon),
        "usage": float(metrics.get("usage", 0.0)),
        "codebook_fingerprint": codebook.fingerprint(),
    }


def run_fit_maps(*, checkpoint, dataset_path, source, target, out_path) -> dict:
    _require_file(checkpoint, "checkpoint")
    _require_file(dataset_path, "dataset")
    _require_writable(out_path, "transport map file")
    cfg, params, codebook = load_checkpoint(checkpoint)
    ds = load_dataset(dataset_path, split="train")
    src_label = VariationLabel(source["kind"], source["viewpoint_deg"])
    tgt_label = VariationLabel(target["kind"], target["viewpoint_deg"])
    seqs = _normalized(ds)
    src = _select(seqs, src_label, "source")
    tgt = _select(seqs, tgt_label, "target")
    map_set = tr.learn_transport_maps(params, cfg, codebook, src, tgt,
                                      source_label=src_label, target_label=tgt_label)
    tr.save_transport_maps(map_set, out_path)
    costs = [tm.cost for tm in map_set.maps]
    return {
        "path": out_path,
        "num_maps": len(map_set.maps),
        "mean_cost": float(np.mean(costs)),
        "max_cost": float(np.max(costs)),
        "codebook_fingerprint": map_set.codebook_fingerprint,
    }


def run_morph(*, checkpoint, maps_path, dataset_path, out_path, split="test") -> dict:
    _require_file(checkpoint, "checkpoint")
    _require_file(maps_path, "transport map file")
    _require_file(dataset_path, "dataset")
    _require_writable(out_path, "morphed dataset")
    cfg, params, codebook = load_checkpoint(checkpoint)
    map_set = tr.load_transport_maps(maps_path)
    ds = load_dataset(dataset_path, split=split)
    src = _select(_normalized(ds), map_set.source, "source")
    morphed = [tr.apply_transport_morph(params, cfg, codebook, map_set, s) for s in src]
    save_dataset(Dataset(morphed, split=split), out_path)
    return {"path": out_path, "num_sequences": len(morphed),
            "source": map_set.source.key(), "target": map_set.target.key()}


def run_fgd(*, checkpoint, dataset_path, maps_path) -> dict:
    _require_file(checkpoint, "checkpoint")
    _require_file(dataset_path, "dataset")
    _require_file(maps_path, "transport map file")
    cfg, params, codebook = load_checkpoint(checkpoint)
    map_set = tr.load_transport_maps(maps_path)
    seqs = _normalized(load_dataset(dataset_path, split="test"))
    src = _select(seqs, map_set.source, "source")
    tgt = _select(seqs, map_set.target, "target")
    morphed = [tr.apply_transport_morph(params, cfg, codebook, map_set, s) for s in src]
    embedder = fgd_mod.Embedder(params=params, cfg=cfg, codebook=codebook)
    return {
        "fgd_source_vs_target": fgd_mod.compute_fgd(embedder, src, tgt),
        "fgd_morphed_vs_target": fgd_mod.compute_fgd(embedder, morphed, tgt),
        "num_source": len(src),
        "num_target": len(tgt),
    }


def run_stats(*, checkpoint, dataset_path, maps_path=None, num_positions=None) -> dict:
    _require_file(checkpoint, "checkpoint")
    _require_file(dataset_path, "dataset")
    cfg, params, codebook = load_checkpoint(checkpoint)
    seqs = _normalized(load_dataset(dataset_path, split="test"))
    grids = tr.tokenize_sequences(params, cfg, codebook, seqs)
    positions = num_positions if num_positions is not None else cfg.t_latent * cfg.J
    report = {
        "K": codebook.K,
        "usage": q.codebook_usage(grids, codebook.K),
        "num_positions": positions,
        "compressed_bits": q.compressed_bits(positions, codebook.K),
    }
    if maps_path is not None:
        _require_file(maps_path, "transport map file")
        map_set = tr.load_transport_maps(maps_path)
        if map_set.codebook_fingerprint != codebook.fingerprint():
            from .errors import ArtifactMismatchError
            raise ArtifactMismatchError("transport maps do not match checkpoint codebook")
        src = _select(seqs, map_set.source, "source")
        src_grids = tr.tokenize_sequences(params, cfg, codebook, src)
        report.update(tr.transport_stats(map_set, src_grids, codebook))
    return report
