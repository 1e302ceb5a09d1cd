"""Optimal bipartite assignment of ground-truth instances to query slots.

The cost of pairing label j with query i combines how little probability the
query gives the label's class with how far its box is from the label's box:

    cost[j, i] = -p_i[class_j] + lambda_giou * (1 - giou(b_j, b_i))
                 + lambda_l1 * ||b_j - b_i||_1

Label sets are padded with no-object entries up to the query count before
matching; padded rows carry only the class term, so no-object assignments
compete purely on predicted no-object probability.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment

from trapseg.boxes import giou_matrix
from trapseg.sets import CLASS_NO_OBJECT, InstanceSet, PredictionSet, pad_classes_to_queries


@dataclass(frozen=True)
class Matching:
    """An injective assignment row -> column of a cost matrix.

    query_for_label[j] is the query index matched to label row j; total_cost
    is the sum of the matched entries and is minimal over all injective
    assignments.
    """

    query_for_label: np.ndarray
    total_cost: float

    def __post_init__(self):
        if len(set(self.query_for_label.tolist())) != self.query_for_label.shape[0]:
            raise ValueError("assignment is not injective")


def hungarian_assign(cost) -> Matching:
    """Solve the rectangular assignment problem for a finite cost matrix.

    Requires rows <= columns; every row is matched to a distinct column and
    the summed cost is minimal. Deterministic: identical inputs produce the
    identical assignment.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError(f"cost matrix must be 2-D, got shape {cost.shape}")
    if cost.shape[0] > cost.shape[1]:
        raise ValueError(f"more labels than queries: {cost.shape}")
    if not np.isfinite(cost).all():
        raise ValueError("cost matrix contains non-finite entries")
    rows, cols = linear_sum_assignment(cost)
    query_for_label = np.empty(cost.shape[0], dtype=np.int64)
    query_for_label[rows] = cols
    return Matching(
        query_for_label=query_for_label,
        total_cost=float(cost[rows, cols].sum()),
    )


def matching_cost(labels: InstanceSet, preds: PredictionSet, cfg) -> np.ndarray:
    """Build the (num_queries x num_queries) assignment cost matrix.

    Row j < len(labels) is the j-th real instance; remaining rows are the
    no-object padding. Gradients never flow through matching, so the result
    is a plain float64 array.
    """
    n = preds.num_queries
    padded_classes = pad_classes_to_queries(labels.classes, n)
    with torch.no_grad():
        probs = preds.class_probs.detach().to(torch.float64)
        cost = -probs[:, padded_classes].T.cpu().numpy()
        m = len(labels)
        if m > 0:
            gt_boxes = torch.as_tensor(labels.boxes, dtype=torch.float64)
            pred_boxes = preds.boxes.detach().to(torch.float64)
            giou_term = 1.0 - giou_matrix(gt_boxes, pred_boxes)
            l1_term = torch.cdist(gt_boxes, pred_boxes, p=1)
            box_cost = cfg.lambda_giou * giou_term + cfg.lambda_l1 * l1_term
            cost[:m] += box_cost.cpu().numpy()
    if not np.isfinite(cost).all():
        raise ValueError("non-finite matching cost (bad boxes or probabilities)")
    return cost


def match_sets(labels: InstanceSet, preds: PredictionSet, cfg) -> Matching:
    """Cost construction plus assignment in one step."""
    return hungarian_assign(matching_cost(labels, preds, cfg))
