"""Training losses: weighted cross entropy, box (GIoU + L1), focal + Dice.

All losses take probabilities (not logits) and are differentiable through
the prediction side. The combined loss sums over all query slots: the class
term always applies, box and mask terms only for queries matched to a real
(non no-object) instance.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor

from trapseg.boxes import giou_matrix
from trapseg.matching import hungarian_assign, matching_cost
from trapseg.sets import CLASS_NO_OBJECT, InstanceSet, PredictionSet, pad_classes_to_queries

# Probabilities are floored before every log so saturated mispredictions
# yield large finite losses instead of inf.
PROB_FLOOR = 1e-8


@dataclass(frozen=True)
class LossConfig:
    """All loss weights and constants.

    class_weights order is (no-object, trap, cell). num_queries bounds the
    instance count of any training sample.
    """

    num_queries: int = 20
    num_classes: int = 3
    class_weights: tuple[float, ...] = (0.5, 0.5, 1.5)
    lambda_giou: float = 0.4
    lambda_l1: float = 0.6
    lambda_focal: float = 0.05
    lambda_dice: float = 1.0
    focal_gamma: float = 2.0
    dice_epsilon: float = 1.0

    def __post_init__(self):
        if len(self.class_weights) != self.num_classes:
            raise ValueError("class_weights length must equal num_classes")
        weights = (
            self.lambda_giou,
            self.lambda_l1,
            self.lambda_focal,
            self.lambda_dice,
        ) + tuple(self.class_weights)
        if any(w < 0 for w in weights):
            raise ValueError("loss weights must be nonnegative")


def classification_loss(label_class: int, probs: Tensor, cfg: LossConfig) -> Tensor:
    """Class-weighted cross entropy against a one-hot label.

    The sum over classes collapses to the label term:
    -beta_k * log(probs[k]).
    """
    beta = cfg.class_weights[label_class]
    return -beta * torch.log(probs[label_class].clamp(min=PROB_FLOOR))


def bbox_loss(box: Tensor, box_hat: Tensor, cfg: LossConfig) -> Tensor:
    """lambda_giou * (1 - giou) + lambda_l1 * ||b - b_hat||_1 on one box pair."""
    g = giou_matrix(box[None], box_hat[None])[0, 0]
    l1 = (box - box_hat).abs().sum()
    return cfg.lambda_giou * (1.0 - g) + cfg.lambda_l1 * l1


def focal_loss(target: Tensor, prob: Tensor, gamma: float) -> Tensor:
    """Binary focal loss, mean over pixels, no alpha balancing.

    p_t is the probability assigned to the true pixel state; hard pixels are
    up-weighted by (1 - p_t)^gamma.
    """
    target = target.to(prob.dtype)
    p_t = prob * target + (1.0 - prob) * (1.0 - target)
    loss = -((1.0 - p_t) ** gamma) * torch.log(p_t.clamp(min=PROB_FLOOR))
    return loss.mean()


def dice_loss(target: Tensor, prob: Tensor, epsilon: float) -> Tensor:
    """1 - (2 * |target * prob| + eps) / (|target| + |prob| + eps).

    The epsilon smoothing makes two empty masks score a perfect 0.
    """
    target = target.to(prob.dtype)
    inter = (target * prob).sum()
    total = target.sum() + prob.sum()
    return 1.0 - (2.0 * inter + epsilon) / (total + epsilon)


def segmentation_loss(target: Tensor, prob: Tensor, cfg: LossConfig) -> Tensor:
    """Weighted sum of focal and Dice mask losses."""
    return cfg.lambda_focal * focal_loss(
        target, prob, cfg.focal_gamma
    ) + cfg.lambda_dice * dice_loss(target, prob, cfg.dice_epsilon)


def combined_loss(
    labels: InstanceSet, preds: PredictionSet, cfg: LossConfig
) -> tuple[Tensor, dict[str, Tensor]]:
    """Match labels to queries, then sum the per-query losses.

    Returns the total along with its {class, box, seg} decomposition for
    logging. Box and segmentation terms are gated by the matched label being
    a real instance; the class term covers every query, with unmatched slots
    supervised toward no-object.
    """
    n = preds.num_queries
    m = len(labels)
    if m > n:
        raise ValueError(f"{m} instances exceed the {n} query slots")
    matching = hungarian_assign(matching_cost(labels, preds, cfg))
    padded_classes = pad_classes_to_queries(labels.classes, n)

    zero = preds.class_probs.sum() * 0.0
    class_total, box_total, seg_total = zero, zero.clone(), zero.clone()
    mask_probs = preds.mask_probs
    for j in range(n):
        i = int(matching.query_for_label[j])
        label_class = int(padded_classes[j])
        class_total = class_total + classification_loss(
            label_class, preds.class_probs[i], cfg
        )
        if label_class != CLASS_NO_OBJECT:
            gt_box = torch.as_tensor(
                labels.boxes[j], dtype=preds.boxes.dtype, device=preds.boxes.device
            )
            box_total = box_total + bbox_loss(gt_box, preds.boxes[i], cfg)
            gt_mask = torch.as_tensor(
                labels.masks[j], device=mask_probs.device
            )
            seg_total = seg_total + segmentation_loss(gt_mask, mask_probs[i], cfg)

    total = class_total + box_total + seg_total
    return total, {"class": class_total, "box": box_total, "seg": seg_total}
