from trapseg.model.checkpoint import load_checkpoint, save_checkpoint
from trapseg.model.network import (
    ForwardOutput,
    InstanceSegmenter,
    ModelConfig,
    build_model,
    count_parameters,
)

__all__ = [
    "ForwardOutput",
    "InstanceSegmenter",
    "ModelConfig",
    "build_model",
    "count_parameters",
    "load_checkpoint",
    "save_checkpoint",
]
