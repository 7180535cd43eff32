"""gaitmorph: discrete gait tokenization, optimal-transport morphing and
Frechet gait distance, with a FastAPI service front end."""

__version__ = "0.1.0"

from .data import Dataset, GeneratorConfig, SkeletonSequence, VariationLabel
from .model import ModelConfig
from .quantizer import Codebook

__all__ = [
    "Dataset",
    "GeneratorConfig",
    "SkeletonSequence",
    "VariationLabel",
    "ModelConfig",
    "Codebook",
    "__version__",
]
