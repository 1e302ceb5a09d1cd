"""Dataset representation, on-disk format, splits and training augmentations.

Disk layout::

    root/samples/<id>/image.png       16-bit grayscale brightfield
    root/samples/<id>/fluor.png       optional 16-bit fluorescence channel
    root/samples/<id>/instances.json  per-instance class / bbox / mask path
    root/samples/<id>/masks/*.png     8-bit binary instance masks
    root/split.json                   seed plus train/val/test id lists

16-bit pixel values are fixed point with scale 1/65536 (8-bit: 1/256), so
quantized images survive a save/load round trip bit-exactly.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter, map_coordinates, zoom

from trapseg.sets import CLASS_CELL, CLASS_TRAP, InstanceSet, mask_to_box

CLASS_FROM_NAME = {"trap": CLASS_TRAP, "cell": CLASS_CELL}
NAME_FROM_CLASS = {v: k for k, v in CLASS_FROM_NAME.items()}

ELASTIC_GRID = 4
ELASTIC_MAX_DISPLACEMENT_PX = 6.0
NOISE_SIGMA = 0.05


class DatasetError(ValueError):
    pass


@dataclass
class Sample:
    """One specimen image with its instance annotations.

    image and fluorescence are raw [0, 1] grayscale float32 arrays (not yet
    normalized for the network). meta carries generator bookkeeping such as
    per-cell fluorescence totals and is not required by the loader.
    """

    image: np.ndarray
    instances: InstanceSet
    id: str
    fluorescence: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return int(self.image.shape[-1])


@dataclass
class DatasetSplit:
    train: list[str]
    val: list[str]
    test: list[str]
    seed: int

    def ids(self, name: str) -> list[str]:
        if name not in ("train", "val", "test"):
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)


def _read_gray(path: Path) -> np.ndarray:
    arr = np.array(Image.open(path))
    if arr.ndim != 2:
        raise DatasetError(f"{path}: expected single-channel grayscale")
    if arr.dtype == np.uint8:
        return (arr.astype(np.float32)) / 256.0
    if arr.dtype in (np.uint16, np.int32):
        return (arr.astype(np.float32)) / 65536.0
    raise DatasetError(f"{path}: unsupported bit depth {arr.dtype}")


def _write_gray16(path: Path, image: np.ndarray) -> None:
    levels = np.clip(np.round(image.astype(np.float64) * 65536.0), 0, 65535)
    Image.fromarray(levels.astype(np.uint16)).save(path)


def save_sample(root, sample: Sample) -> Path:
    """Write one sample in the on-disk layout; returns its directory."""
    sample_dir = Path(root) / "samples" / sample.id
    mask_dir = sample_dir / "masks"
    mask_dir.mkdir(parents=True, exist_ok=True)
    _write_gray16(sample_dir / "image.png", sample.image)
    if sample.fluorescence is not None:
        _write_gray16(sample_dir / "fluor.png", sample.fluorescence)
    records = []
    for i in range(len(sample.instances)):
        mask_name = f"masks/inst_{i:02d}.png"
        Image.fromarray(
            (sample.instances.masks[i].astype(np.uint8)) * 255
        ).save(sample_dir / mask_name)
        records.append(
            {
                "class": NAME_FROM_CLASS[int(sample.instances.classes[i])],
                "bbox": [float(v) for v in sample.instances.boxes[i]],
                "mask": mask_name,
            }
        )
    payload = {"instances": records}
    if sample.meta:
        payload["meta"] = sample.meta
    (sample_dir / "instances.json").write_text(json.dumps(payload, indent=1))
    return sample_dir


def save_dataset(root, samples: list[Sample]) -> None:
    for sample in samples:
        save_sample(root, sample)


def load_sample(sample_dir) -> Sample:
    """Load and validate one sample directory; raises DatasetError on problems."""
    sample_dir = Path(sample_dir)
    sample_id = sample_dir.name
    try:
        image = _read_gray(sample_dir / "image.png")
        fluor_path = sample_dir / "fluor.png"
        fluor = _read_gray(fluor_path) if fluor_path.exists() else None
        record = json.loads((sample_dir / "instances.json").read_text())
        classes, boxes, masks = [], [], []
        for entry in record["instances"]:
            if entry["class"] not in CLASS_FROM_NAME:
                raise DatasetError(f"unknown class {entry['class']!r}")
            mask_path = sample_dir / entry["mask"]
            if not mask_path.exists():
                raise DatasetError(f"missing mask file {entry['mask']}")
            mask = np.array(Image.open(mask_path)) > 0
            if mask.shape != image.shape:
                raise DatasetError(f"mask {entry['mask']} shape {mask.shape} != image")
            box = np.asarray(entry["bbox"], dtype=np.float64)
            if box.shape != (4,):
                raise DatasetError(f"malformed bbox {entry['bbox']}")
            if not ((0 <= box[:2]).all() and (box[:2] <= 1).all() and (box[2:] > 0).all() and (box[2:] <= 1).all()):
                raise DatasetError(f"out-of-range bbox {entry['bbox']}")
            classes.append(CLASS_FROM_NAME[entry["class"]])
            boxes.append(box)
            masks.append(mask)
        size = image.shape[-1]
        instances = InstanceSet(
            classes=np.asarray(classes, dtype=np.int64),
            boxes=np.stack(boxes) if boxes else np.zeros((0, 4)),
            masks=np.stack(masks) if masks else np.zeros((0, size, size), dtype=bool),
        ).validate()
        return Sample(
            image=image,
            instances=instances,
            id=sample_id,
            fluorescence=fluor,
            meta=record.get("meta", {}),
        )
    except DatasetError:
        raise
    except (OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
        raise DatasetError(f"sample {sample_id!r}: {exc}") from exc


def load_dataset(root) -> list[Sample]:
    """Load every sample under root/samples, sorted by id."""
    samples_dir = Path(root) / "samples"
    if not samples_dir.is_dir():
        warnings.warn(f"no samples directory under {root}; returning empty dataset")
        return []
    dirs = sorted(d for d in samples_dir.iterdir() if d.is_dir())
    if not dirs:
        warnings.warn(f"empty dataset at {root}")
        return []
    samples = []
    for d in dirs:
        try:
            samples.append(load_sample(d))
        except DatasetError as exc:
            raise DatasetError(f"sample {d.name!r}: {exc}") from exc
    return samples


def split_dataset(
    samples: list[Sample] | list[str],
    seed: int,
    fractions: tuple[float, float, float] = (0.76, 0.12, 0.12),
) -> DatasetSplit:
    """Deterministic shuffle-and-slice split into train/val/test id lists.

    Train and val sizes round down; the remainder lands in test, so e.g.
    419 samples with the default fractions give 318/50/51.
    """
    if len(fractions) != 3 or any(f < 0 for f in fractions) or sum(fractions) > 1 + 1e-9:
        raise ValueError(f"bad split fractions {fractions}")
    ids = sorted(s.id if isinstance(s, Sample) else s for s in samples)
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    n = len(ids)
    n_train = int(np.floor(fractions[0] * n))
    n_val = int(np.floor(fractions[1] * n))
    return DatasetSplit(
        train=shuffled[:n_train],
        val=shuffled[n_train : n_train + n_val],
        test=shuffled[n_train + n_val :],
        seed=seed,
    )


def save_split(root, split: DatasetSplit) -> None:
    (Path(root) / "split.json").write_text(
        json.dumps(
            {"seed": split.seed, "train": split.train, "val": split.val, "test": split.test},
            indent=1,
        )
    )


def load_split(root) -> DatasetSplit:
    payload = json.loads((Path(root) / "split.json").read_text())
    return DatasetSplit(
        train=payload["train"], val=payload["val"], test=payload["test"], seed=payload["seed"]
    )


def normalize(image: np.ndarray) -> np.ndarray:
    """Per-image zero mean, unit variance; constant images map to zeros."""
    image = image.astype(np.float32)
    mean = float(image.mean())
    std = float(image.std())
    if std < 1e-8:
        return np.zeros_like(image)
    return (image - mean) / std


def _rebuild_instances(sample: Sample, masks: list[np.ndarray]) -> InstanceSet:
    """Recompute boxes from transformed masks, dropping emptied instances."""
    kept_classes, kept_boxes, kept_masks = [], [], []
    for cls, mask in zip(sample.instances.classes, masks):
        if not mask.any():
            warnings.warn(f"sample {sample.id}: augmentation emptied an instance mask")
            continue
        kept_classes.append(int(cls))
        kept_boxes.append(mask_to_box(mask))
        kept_masks.append(mask)
    size = sample.size
    return InstanceSet(
        classes=np.asarray(kept_classes, dtype=np.int64),
        boxes=np.stack(kept_boxes) if kept_boxes else np.zeros((0, 4)),
        masks=np.stack(kept_masks) if kept_masks else np.zeros((0, size, size), dtype=bool),
    )


def _horizontal_flip(sample: Sample) -> Sample:
    image = np.ascontiguousarray(sample.image[:, ::-1])
    fluor = (
        np.ascontiguousarray(sample.fluorescence[:, ::-1])
        if sample.fluorescence is not None
        else None
    )
    masks = [np.ascontiguousarray(m[:, ::-1]) for m in sample.instances.masks]
    return Sample(
        image=image,
        instances=_rebuild_instances(sample, masks),
        id=sample.id,
        fluorescence=fluor,
        meta=sample.meta,
    )


def _elastic_deform(sample: Sample, rng: np.random.Generator) -> Sample:
    """Smooth random displacement from a coarse grid, identical for all channels."""
    size = sample.size
    coarse = rng.uniform(-1.0, 1.0, (2, ELASTIC_GRID, ELASTIC_GRID))
    disp = zoom(coarse, (1, size / ELASTIC_GRID, size / ELASTIC_GRID), order=3)
    disp = gaussian_filter(disp, sigma=(0, 4.0, 4.0))
    peak = np.abs(disp).max()
    amplitude = ELASTIC_MAX_DISPLACEMENT_PX * rng.uniform(0.5, 1.0)
    disp = disp * (amplitude / max(peak, 1e-9))
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    coords = np.stack([yy + disp[0], xx + disp[1]])

    image = map_coordinates(sample.image, coords, order=1, mode="reflect").astype(np.float32)
    fluor = (
        map_coordinates(sample.fluorescence, coords, order=1, mode="reflect").astype(np.float32)
        if sample.fluorescence is not None
        else None
    )
    masks = [
        map_coordinates(m.astype(np.uint8), coords, order=0, mode="constant") > 0
        for m in sample.instances.masks
    ]
    return Sample(
        image=image,
        instances=_rebuild_instances(sample, masks),
        id=sample.id,
        fluorescence=fluor,
        meta=sample.meta,
    )


def _additive_noise(sample: Sample, rng: np.random.Generator) -> Sample:
    image = np.clip(
        sample.image + rng.normal(0.0, NOISE_SIGMA, sample.image.shape), 0.0, 1.0
    ).astype(np.float32)
    return Sample(
        image=image,
        instances=sample.instances,
        id=sample.id,
        fluorescence=sample.fluorescence,
        meta=sample.meta,
    )


def augment(sample: Sample, seed: int, prob: float = 0.6) -> Sample:
    """With probability `prob`, apply exactly one of elastic deformation,
    horizontal flip or additive Gaussian noise (chosen uniformly).

    Geometric transforms move image, fluorescence and masks together; boxes
    are recomputed from the transformed masks.
    """
    rng = np.random.default_rng(seed)
    if rng.random() >= prob:
        return sample
    choice = int(rng.integers(3))
    if choice == 0:
        return _elastic_deform(sample, rng)
    if choice == 1:
        return _horizontal_flip(sample)
    return _additive_noise(sample, rng)
