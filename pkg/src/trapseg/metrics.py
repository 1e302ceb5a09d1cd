"""Evaluation metrics over rendered segmentation maps and matched instances.

Semantic maps are int arrays with 0 = background, 1 = trap, 2 = cell.
Empty-vs-empty overlaps count as perfect agreement (1), so a correctly
predicted empty class does not penalize the score.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from trapseg.boxes import iou
from trapseg.sets import CLASS_CELL, CLASS_NAMES, CLASS_NO_OBJECT, CLASS_TRAP


def render_semantic_map(classes: np.ndarray, masks: np.ndarray, shape) -> np.ndarray:
    """Paint per-instance masks into a single class-id map.

    Masks are assumed pairwise disjoint, so paint order cannot matter.
    """
    out = np.zeros(shape, dtype=np.int64)
    for cls, mask in zip(classes, masks):
        out[mask.astype(bool)] = int(cls)
    return out


def dice_coefficient(y: np.ndarray, y_hat: np.ndarray) -> float:
    """Global foreground Dice, omitting the background class.

    A pixel counts toward the intersection only when both maps give it the
    same foreground class.
    """
    fg_y = y != CLASS_NO_OBJECT
    fg_hat = y_hat != CLASS_NO_OBJECT
    denom = int(fg_y.sum()) + int(fg_hat.sum())
    if denom == 0:
        return 1.0
    inter = int((fg_y & fg_hat & (y == y_hat)).sum())
    return 2.0 * inter / denom


def class_jaccard(y: np.ndarray, y_hat: np.ndarray, k: int) -> float:
    """Intersection-over-union of the class-k pixel sets."""
    a = y == k
    b = y_hat == k
    union = int((a | b).sum())
    if union == 0:
        return 1.0
    return int((a & b).sum()) / union


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    union = int((a | b).sum())
    if union == 0:
        return 1.0
    return int((a & b).sum()) / union


def mean_instance_jaccard(pairs: list[tuple[np.ndarray, np.ndarray]]) -> float:
    """Unweighted mean IoU over (ground-truth mask, predicted mask) pairs.

    A pair whose prediction is empty scores 0, which is how unmatched
    ground-truth instances enter the average.
    """
    if not pairs:
        raise ValueError("no instances to average over")
    return float(np.mean([mask_iou(gt.astype(bool), pred.astype(bool)) for gt, pred in pairs]))


def seg_accuracy(y: np.ndarray, y_hat: np.ndarray) -> float:
    """Fraction of pixels whose 3-way class label matches (background counts)."""
    return float((y == y_hat).mean())


def bbox_jaccard(pairs: list[tuple[np.ndarray, np.ndarray]]) -> float:
    """Mean box IoU over matched (ground-truth, predicted) box pairs."""
    if not pairs:
        raise ValueError("no box pairs to average over")
    return float(np.mean([iou(gt, pred) for gt, pred in pairs]))


def classification_accuracy(assigned: np.ndarray, predicted: np.ndarray) -> float:
    """Fraction of query slots whose predicted class matches the assigned label.

    Covers all N queries: slots matched to padding count as correct when they
    predict no-object.
    """
    assigned = np.asarray(assigned)
    predicted = np.asarray(predicted)
    if assigned.shape != predicted.shape:
        raise ValueError("assigned / predicted length mismatch")
    return float((assigned == predicted).mean())


@dataclass
class EvalReport:
    """All metrics of one evaluation run.

    Pixel metrics (dice, per-class Jaccard, segmentation accuracy) are means
    of per-sample values; instance, box and classification metrics pool their
    units (instances / matched pairs / query slots) across the whole split.
    """

    dice: float
    class_jaccard: dict[str, float]
    cell_jaccard: float
    mean_instance_jaccard: float | None
    seg_accuracy: float
    bbox_jaccard: float | None
    classification_accuracy: float
    counts: dict[str, int] = field(default_factory=dict)

    def to_text(self) -> str:
        lines = [
            f"dice {self.dice:.6f}",
        ]
        for name in CLASS_NAMES[1:]:
            lines.append(f"jaccard_{name} {self.class_jaccard[name]:.6f}")
        lines.append(f"cell_jaccard {self.cell_jaccard:.6f}")
        lines.append(
            "mean_instance_jaccard "
            + ("absent" if self.mean_instance_jaccard is None else f"{self.mean_instance_jaccard:.6f}")
        )
        lines.append(f"seg_accuracy {self.seg_accuracy:.6f}")
        lines.append(
            "bbox_jaccard "
            + ("absent" if self.bbox_jaccard is None else f"{self.bbox_jaccard:.6f}")
        )
        lines.append(f"classification_accuracy {self.classification_accuracy:.6f}")
        for name, count in sorted(self.counts.items()):
            lines.append(f"count_{name} {count}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "EvalReport":
        values: dict[str, str] = {}
        for line in text.strip().splitlines():
            key, value = line.split(maxsplit=1)
            values[key] = value

        def fnum(key: str) -> float | None:
            return None if values[key] == "absent" else float(values[key])

        return cls(
            dice=float(values["dice"]),
            class_jaccard={name: float(values[f"jaccard_{name}"]) for name in CLASS_NAMES[1:]},
            cell_jaccard=float(values["cell_jaccard"]),
            mean_instance_jaccard=fnum("mean_instance_jaccard"),
            seg_accuracy=float(values["seg_accuracy"]),
            bbox_jaccard=fnum("bbox_jaccard"),
            classification_accuracy=float(values["classification_accuracy"]),
            counts={
                key[len("count_"):]: int(value)
                for key, value in values.items()
                if key.startswith("count_")
            },
        )
