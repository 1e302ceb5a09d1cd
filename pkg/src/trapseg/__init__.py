"""Direct instance segmentation of cells and trap microstructures.

A small detection-transformer network predicts a fixed-size set of
(class, box, mask) tuples per image; ground-truth instances are matched to
query slots by optimal bipartite assignment and trained with a combined
classification / box / mask loss.
"""

from trapseg.boxes import BoundingBox, giou, iou
from trapseg.losses import LossConfig, combined_loss
from trapseg.sets import CLASS_CELL, CLASS_NO_OBJECT, CLASS_TRAP, InstanceSet, PredictionSet

__all__ = [
    "BoundingBox",
    "CLASS_CELL",
    "CLASS_NO_OBJECT",
    "CLASS_TRAP",
    "InstanceSet",
    "LossConfig",
    "PredictionSet",
    "combined_loss",
    "giou",
    "iou",
]
