"""
Detection losses driven by an AssignmentOutput.

Classification uses a focal loss split into a positive term and a negative
penalty term for the assigned category plus a background term for every
other category. Regression is the weight-normalized GIoU loss. Gradients
are returned w.r.t. probabilities and box corners; the detector chains
them to its raw parameters. Assignment weights are constants here.
"""

from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from assignment import UNASSIGNED, AssignmentOutput, PredictionSnapshot
from errors import ConfigError, InvalidInputError
from geometry import GroundTruth, giou_loss_batch

PROB_EPS = 1e-6


@dataclass
class FocalParams:
    """Focal loss shape: focusing gamma, balance, and penalty decay beta."""

    gamma: float = 2.0
    balance: float = 0.25
    beta: float = 4.0

    def __post_init__(self):
        if self.gamma < 0:
            raise ConfigError("gamma must be >= 0", "focal.gamma")
        if not 0.0 < self.balance < 1.0:
            raise ConfigError("balance must lie in (0, 1)", "focal.balance")
        if self.beta < 0:
            raise ConfigError("beta must be >= 0", "focal.beta")


@dataclass
class LossBreakdown:
    """Loss parts of one image. Classification sums are un-normalized."""

    l_cls_pos: float = 0.0
    l_cls_neg_penalty: float = 0.0
    l_cls_background: float = 0.0
    l_reg: float = 0.0
    n_cls: float = 1.0
    n_reg: float = 1.0

    @property
    def l_cls(self) -> float:
        return (self.l_cls_pos + self.l_cls_neg_penalty + self.l_cls_background) / self.n_cls

    @property
    def l_total(self) -> float:
        return self.l_cls + self.l_reg

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.l_total))

    def as_row(self) -> Dict[str, float]:
        return {
            "l_cls_pos": self.l_cls_pos,
            "l_cls_neg": self.l_cls_neg_penalty,
            "l_cls_bg": self.l_cls_background,
            "l_reg": self.l_reg,
            "l_total": self.l_total,
        }


@dataclass
class LossGradients:
    """dL/dprobabilities [N, K] and dL/dboxes [N, 4]."""

    probabilities: np.ndarray
    boxes: np.ndarray


def focal_positive(p: np.ndarray, params: FocalParams) -> Tuple[np.ndarray, np.ndarray]:
    """balance * (1-p)^gamma * -log(p) and its derivative in p."""
    a, g = params.balance, params.gamma
    one_minus = 1.0 - p
    value = a * one_minus**g * -np.log(p)
    deriv = a * (g * one_minus ** (g - 1.0) * np.log(p) - one_minus**g / p)
    return value, deriv


def focal_negative(p: np.ndarray, params: FocalParams) -> Tuple[np.ndarray, np.ndarray]:
    """(1-balance) * p^gamma * -log(1-p) and its derivative in p."""
    a, g = 1.0 - params.balance, params.gamma
    log_neg = -np.log1p(-p)
    value = a * p**g * log_neg
    deriv = a * (g * p ** (g - 1.0) * log_neg + p**g / (1.0 - p))
    return value, deriv


def classification_loss(probabilities: np.ndarray, assignment: AssignmentOutput,
                        params: FocalParams) -> Tuple[LossBreakdown, np.ndarray]:
    """Three-part focal loss and its gradient w.r.t. the probabilities.

    For an assigned anchor with category c and weight w the assigned entry
    contributes w * FL+(p) + (1-w)^beta * FL-(p); every other entry, and all
    entries of unassigned anchors, contribute FL-(p). The sum is divided by
    N = max(sum of w_cls, 1).
    """
    raw = np.asarray(probabilities, dtype=np.float64)
    if raw.ndim != 2 or raw.shape[0] != assignment.num_anchors:
        raise InvalidInputError(
            f"Probabilities of shape {raw.shape} do not match {assignment.num_anchors} anchors."
        )
    p = np.clip(raw, PROB_EPS, 1.0 - PROB_EPS)
    if not np.all(np.isfinite(p)):
        raise InvalidInputError("Probabilities are not finite after clamping.")

    pos_coeff = np.zeros_like(p)
    neg_coeff = np.ones_like(p)
    penalty = np.zeros(p.shape, dtype=bool)

    rows = np.flatnonzero(assignment.assigned_object != UNASSIGNED)
    cols = assignment.assigned_category[rows]
    w = assignment.weight_cls[rows]
    pos_coeff[rows, cols] = w
    neg_coeff[rows, cols] = (1.0 - w) ** params.beta
    penalty[rows, cols] = True

    fl_pos, d_pos = focal_positive(p, params)
    fl_neg, d_neg = focal_negative(p, params)

    n_cls = max(float(assignment.weight_cls.sum()), 1.0)
    breakdown = LossBreakdown(
        l_cls_pos=float(np.sum(pos_coeff * fl_pos)),
        l_cls_neg_penalty=float(np.sum((neg_coeff * fl_neg)[penalty])),
        l_cls_background=float(np.sum(fl_neg[~penalty])),
        n_cls=n_cls,
    )

    grad = (pos_coeff * d_pos + neg_coeff * d_neg) / n_cls
    grad[(raw < PROB_EPS) | (raw > 1.0 - PROB_EPS)] = 0.0
    return breakdown, grad


def regression_normalizer(assignment: AssignmentOutput) -> float:
    total = float(assignment.weight_reg.sum())
    return total if total > 0 else 1.0


def regression_loss(predicted_boxes: np.ndarray, assignment: AssignmentOutput,
                    gt: GroundTruth) -> Tuple[float, np.ndarray]:
    """Weighted mean GIoU loss over regression-weighted anchors, with gradient."""
    boxes = np.asarray(predicted_boxes, dtype=np.float64).reshape(-1, 4)
    grad = np.zeros_like(boxes)
    weighted = np.flatnonzero(assignment.weight_reg > 0)
    if weighted.size == 0:
        return 0.0, grad

    targets = assignment.assigned_object[weighted]
    if np.any(targets == UNASSIGNED):
        raise InvalidInputError("Regression weight on an anchor without an assigned object.")

    n_reg = regression_normalizer(assignment)
    w = assignment.weight_reg[weighted]
    losses, d_boxes = giou_loss_batch(boxes[weighted], gt.boxes[targets])
    grad[weighted] = d_boxes * (w / n_reg)[:, None]
    return float(np.sum(w * losses) / n_reg), grad


def total_loss(snapshot: PredictionSnapshot, assignment: AssignmentOutput, gt: GroundTruth,
               params: FocalParams) -> Tuple[LossBreakdown, LossGradients]:
    """L_det = L_cls + L_reg with gradients for both detector outputs."""
    breakdown, d_probs = classification_loss(snapshot.probabilities, assignment, params)
    l_reg, d_boxes = regression_loss(snapshot.boxes, assignment, gt)
    breakdown.l_reg = l_reg
    breakdown.n_reg = regression_normalizer(assignment)
    return breakdown, LossGradients(probabilities=d_probs, boxes=d_boxes)
