"""Versioned checkpoint container: config, weights and selection metadata."""

from __future__ import annotations

from dataclasses import asdict
from pathlib import Path

import torch

from trapseg.model.network import InstanceSegmenter, ModelConfig, build_model

CHECKPOINT_FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(
    path,
    model: InstanceSegmenter,
    epoch: int,
    selection_metric: float,
) -> None:
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "model_config": asdict(model.cfg),
        "state_dict": model.state_dict(),
        "epoch": int(epoch),
        "selection_metric": float(selection_metric),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path) -> tuple[InstanceSegmenter, dict]:
    """Rebuild the model from a checkpoint; refuses other format versions.

    Returns the model (eval mode) and a metadata dict with epoch and
    selection_metric.
    """
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format version {version!r} "
            f"(expected {CHECKPOINT_FORMAT_VERSION})"
        )
    cfg_dict = dict(payload["model_config"])
    cfg_dict["backbone_filters"] = tuple(cfg_dict["backbone_filters"])
    cfg = ModelConfig(**cfg_dict)
    model = build_model(cfg)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    meta = {
        "epoch": payload["epoch"],
        "selection_metric": payload["selection_metric"],
    }
    return model, meta
