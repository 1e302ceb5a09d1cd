"""Label and prediction sets for query-based set prediction.

Ground truth lives in numpy (loader / augmentation territory), predictions
in torch (model output). Class ids are fixed: 0 = no-object, 1 = trap,
2 = cell; class 0 doubles as background in rendered segmentation maps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor

CLASS_NO_OBJECT = 0
CLASS_TRAP = 1
CLASS_CELL = 2
CLASS_NAMES = ("no_object", "trap", "cell")


def mask_to_box(mask: np.ndarray) -> np.ndarray:
    """Tight normalized (cx, cy, w, h) box around a binary mask's foreground.

    Pixel (r, c) is treated as covering the unit square [c, c+1] x [r, r+1],
    so a single-pixel mask yields a box of width 1/size.
    """
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        raise ValueError("mask has no foreground pixels")
    h_px, w_px = mask.shape
    y0, y1 = rows[0], rows[-1] + 1
    x0, x1 = cols[0], cols[-1] + 1
    return np.array(
        [
            (x0 + x1) / 2.0 / w_px,
            (y0 + y1) / 2.0 / h_px,
            (x1 - x0) / w_px,
            (y1 - y0) / h_px,
        ],
        dtype=np.float64,
    )


@dataclass
class InstanceSet:
    """Per-image ground truth: one class id, box and binary mask per instance."""

    classes: np.ndarray  # int64 [M], values in {CLASS_TRAP, CLASS_CELL}
    boxes: np.ndarray    # float64 [M, 4] normalized (cx, cy, w, h)
    masks: np.ndarray    # bool [M, H, W], pairwise disjoint

    @classmethod
    def empty(cls, mask_size: int = 128) -> "InstanceSet":
        return cls(
            classes=np.zeros(0, dtype=np.int64),
            boxes=np.zeros((0, 4), dtype=np.float64),
            masks=np.zeros((0, mask_size, mask_size), dtype=bool),
        )

    def __len__(self) -> int:
        return int(self.classes.shape[0])

    def validate(self, box_tolerance_px: float = 1.0) -> "InstanceSet":
        """Check the instance-set invariants; raises ValueError on violation.

        Masks must be pairwise disjoint and non-empty, classes must be real
        object classes, and each box must bound its mask's foreground within
        the given pixel tolerance.
        """
        m = len(self)
        if self.boxes.shape != (m, 4) or self.masks.shape[0] != m:
            raise ValueError("classes / boxes / masks length mismatch")
        if m == 0:
            return self
        if not np.isin(self.classes, (CLASS_TRAP, CLASS_CELL)).all():
            raise ValueError(f"invalid class ids: {self.classes}")
        if self.masks.sum(axis=0).max() > 1:
            raise ValueError("instance masks overlap")
        side = self.masks.shape[-1]
        tol = box_tolerance_px / side
        for i in range(m):
            if not self.masks[i].any():
                raise ValueError(f"instance {i} has an empty mask")
            w, h = self.boxes[i, 2], self.boxes[i, 3]
            if w <= 0 or h <= 0:
                raise ValueError(f"instance {i} has a zero-area box")
            tight = mask_to_box(self.masks[i])
            if np.abs(self.boxes[i] - tight).max() > tol + 1e-9:
                raise ValueError(
                    f"instance {i} box {self.boxes[i]} deviates from the mask-tight "
                    f"box {tight} by more than {box_tolerance_px} px"
                )
        return self

    def reordered(self, order: np.ndarray) -> "InstanceSet":
        return InstanceSet(
            classes=self.classes[order],
            boxes=self.boxes[order],
            masks=self.masks[order],
        )


@dataclass
class PredictionSet:
    """One image's set prediction over N query slots.

    class_probs rows are probability vectors over (no-object, trap, cell);
    mask_logits are pre-softmax, normalized across queries via mask_probs so
    every pixel carries a distribution over the N slots.
    """

    class_probs: Tensor  # [N, K]
    boxes: Tensor        # [N, 4] in (cx, cy, w, h), sigmoid-bounded
    mask_logits: Tensor  # [N, H, W]

    @property
    def mask_probs(self) -> Tensor:
        return F.softmax(self.mask_logits, dim=0)

    @property
    def num_queries(self) -> int:
        return int(self.class_probs.shape[0])

    def validate(self) -> "PredictionSet":
        n, k = self.class_probs.shape
        if self.boxes.shape != (n, 4):
            raise ValueError(f"boxes shape {tuple(self.boxes.shape)} != ({n}, 4)")
        if self.mask_logits.shape[0] != n:
            raise ValueError("mask_logits query dimension mismatch")
        if (self.class_probs < 0).any():
            raise ValueError("negative class probability")
        row_sums = self.class_probs.sum(dim=-1)
        if (row_sums - 1.0).abs().max() > 1e-6:
            raise ValueError("class probability rows do not sum to 1")
        return self


def pad_classes_to_queries(classes: np.ndarray, num_queries: int) -> np.ndarray:
    """Pad a label class vector with no-object entries up to num_queries."""
    m = classes.shape[0]
    if m > num_queries:
        raise ValueError(f"{m} instances exceed the {num_queries} query slots")
    padded = np.full(num_queries, CLASS_NO_OBJECT, dtype=np.int64)
    padded[:m] = classes
    return padded
