"""Axis-aligned box geometry in normalized center-size coordinates.

Boxes are (cx, cy, w, h) with all values relative to the image side, so a
full-frame box is (0.5, 0.5, 1, 1). Corner form (x0, y0, x1, y1) is used
internally for area arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor


class DegenerateBoxError(ValueError):
    """Overlap is undefined: both boxes have zero area and coincide."""


@dataclass(frozen=True)
class BoundingBox:
    cx: float
    cy: float
    w: float
    h: float

    def validate(self) -> "BoundingBox":
        if not (0.0 <= self.cx <= 1.0 and 0.0 <= self.cy <= 1.0):
            raise ValueError(f"box center outside [0, 1]: {self}")
        if not (0.0 < self.w <= 1.0 and 0.0 < self.h <= 1.0):
            raise ValueError(f"box size outside (0, 1]: {self}")
        return self

    def to_corners(self) -> tuple[float, float, float, float]:
        return (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )

    @classmethod
    def from_corners(cls, x0: float, y0: float, x1: float, y1: float) -> "BoundingBox":
        return cls((x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0)

    def as_tensor(self, dtype: torch.dtype = torch.float64) -> Tensor:
        return torch.tensor([self.cx, self.cy, self.w, self.h], dtype=dtype)


def box_cxcywh_to_xyxy(boxes: Tensor) -> Tensor:
    """Convert [..., 4] boxes from center-size to corner form."""
    cx, cy, w, h = boxes.unbind(-1)
    return torch.stack(
        [cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], dim=-1
    )


def box_xyxy_to_cxcywh(boxes: Tensor) -> Tensor:
    """Convert [..., 4] boxes from corner form to center-size."""
    x0, y0, x1, y1 = boxes.unbind(-1)
    return torch.stack(
        [(x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0], dim=-1
    )


def _inter_union(a_xyxy: Tensor, b_xyxy: Tensor) -> tuple[Tensor, Tensor]:
    """Pairwise intersection and union areas for [M, 4] x [N, 4] corner boxes."""
    area_a = (a_xyxy[:, 2] - a_xyxy[:, 0]) * (a_xyxy[:, 3] - a_xyxy[:, 1])
    area_b = (b_xyxy[:, 2] - b_xyxy[:, 0]) * (b_xyxy[:, 3] - b_xyxy[:, 1])
    lt = torch.max(a_xyxy[:, None, :2], b_xyxy[None, :, :2])
    rb = torch.min(a_xyxy[:, None, 2:], b_xyxy[None, :, 2:])
    wh = (rb - lt).clamp(min=0)
    inter = wh[..., 0] * wh[..., 1]
    union = area_a[:, None] + area_b[None, :] - inter
    return inter, union


def iou_matrix(a: Tensor, b: Tensor) -> Tensor:
    """Pairwise IoU for [M, 4] x [N, 4] boxes in center-size form.

    No degenerate-box guard: callers must not pass zero-area boxes on both
    sides of a pair (model box heads are sigmoid-bounded and the dataset
    loader rejects zero-area ground truth).
    """
    inter, union = _inter_union(box_cxcywh_to_xyxy(a), box_cxcywh_to_xyxy(b))
    return inter / union


def giou_matrix(a: Tensor, b: Tensor) -> Tensor:
    """Pairwise generalized IoU: IoU minus the enclosing-box penalty.

    giou = iou - (|C| - |A u B|) / |C| with C the smallest enclosing box;
    ranges over (-1, 1] and is differentiable in the box coordinates.
    """
    a_xyxy = box_cxcywh_to_xyxy(a)
    b_xyxy = box_cxcywh_to_xyxy(b)
    inter, union = _inter_union(a_xyxy, b_xyxy)
    lt = torch.min(a_xyxy[:, None, :2], b_xyxy[None, :, :2])
    rb = torch.max(a_xyxy[:, None, 2:], b_xyxy[None, :, 2:])
    wh = (rb - lt).clamp(min=0)
    enclosing = wh[..., 0] * wh[..., 1]
    return inter / union - (enclosing - union) / enclosing


def _as_box_tensor(box) -> Tensor:
    if isinstance(box, BoundingBox):
        return box.as_tensor()
    t = torch.as_tensor(box, dtype=torch.float64)
    if t.shape != (4,):
        raise ValueError(f"expected a single (cx, cy, w, h) box, got shape {tuple(t.shape)}")
    return t


def iou(a, b) -> float:
    """IoU of two boxes with the degenerate-box rule.

    Zero-area boxes overlap nothing, so the result is 0 unless both boxes
    are zero-area and coincident, which is undefined and raises.
    """
    ta, tb = _as_box_tensor(a), _as_box_tensor(b)
    inter, union = _inter_union(
        box_cxcywh_to_xyxy(ta[None]), box_cxcywh_to_xyxy(tb[None])
    )
    if union.item() <= 0.0:
        if torch.equal(ta, tb):
            raise DegenerateBoxError(f"coincident zero-area boxes: {a}")
        return 0.0
    return float(inter.item() / union.item())


def giou(a, b) -> float:
    """Generalized IoU of two boxes; same degenerate guard as :func:`iou`."""
    base = iou(a, b)
    ta, tb = _as_box_tensor(a), _as_box_tensor(b)
    a_xyxy = box_cxcywh_to_xyxy(ta[None])
    b_xyxy = box_cxcywh_to_xyxy(tb[None])
    _, union = _inter_union(a_xyxy, b_xyxy)
    lt = torch.min(a_xyxy[:, :2], b_xyxy[:, :2])
    rb = torch.max(a_xyxy[:, 2:], b_xyxy[:, 2:])
    wh = (rb - lt).clamp(min=0)
    enclosing = float((wh[:, 0] * wh[:, 1]).item())
    if enclosing <= 0.0:
        return base
    return base - (enclosing - float(union.item())) / enclosing
