"""Pydantic request/response models for the service.

Unknown keys are rejected everywhere (extra="forbid") so a typo in a config
file fails fast instead of being silently ignored.
"""

from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class VariationSpec(StrictModel):
    kind: str = "NM"
    viewpoint_deg: float = 0.0


class ModelSpec(StrictModel):
    T: int = 64
    J: int = 18
    enc_channels: list[int] = [16, 32]
    dec_channels: list[int] = [16, 8]
    n_latent: int = 32
    n_code: int = 16
    adjacency_scales: int = 2
    seed: int = 0


class GenRequest(StrictModel):
    out_path: str
    split: str = "train"
    subjects: int = 2
    walks_per_variation: int = 2
    variations: list[VariationSpec] = Field(default_factory=lambda: [VariationSpec()])
    T: int = 64
    J: int = 18
    noise_std: float = 0.0
    seed: int = 0


class TrainRequest(StrictModel):
    dataset_path: str
    checkpoint_out: str
    metrics_out: str
    model: ModelSpec = Field(default_factory=ModelSpec)
    K: int = 8
    steps: int = 500
    batch_size: int = 8
    seed: int = 0
    log_interval: int = 50
    commit_weight: float = 0.25
    ortho_weight: float = 0.01
    lr_min: float = 0.0025
    lr_max: float = 0.0075
    cycle_len: int = 2000
    weight_decay: float = 1e-4


class FitMapsRequest(StrictModel):
    checkpoint: str
    dataset_path: str
    source: VariationSpec
    target: VariationSpec
    out_path: str


class MorphRequest(StrictModel):
    checkpoint: str
    maps_path: str
    dataset_path: str
    out_path: str


class FgdRequest(StrictModel):
    checkpoint: str
    dataset_path: str
    maps_path: str


class StatsRequest(StrictModel):
    checkpoint: str
    dataset_path: str
    maps_path: str | None = None
    num_positions: int | None = None


class ErrorResponse(StrictModel):
    error: str
    detail: str
