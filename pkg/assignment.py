"""
Mutual-supervision sample assignment.

Per image: match every anchor to at most one ground-truth object, build an
adaptive candidate bag per object from the joint likelihood p * IoU^theta,
rank the bag members separately for the classification and regression
heads using the counterpart head's output, and turn the ranks into
per-head loss weights.

Assignment reads a frozen PredictionSnapshot and never produces gradients.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from errors import ConfigError, InvalidInputError
from geometry import GroundTruth, aligned_iou, box_areas, pairwise_iou

logger = logging.getLogger(__name__)

UNASSIGNED = -1

CRITERIA_MODES = ("mutual", "classification", "regression")


@dataclass
class AssignConfig:
    """Hyper-parameters of the assignment."""

    theta: float = 4.0
    bag_threshold: float = 0.1
    alpha: float = 1.0 / 3.0
    tau_ratio: float = 0.5
    hard_targets: bool = False
    fixed_tau: Optional[float] = None
    criteria: str = "mutual"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.theta < 1:
            raise ConfigError("theta must be >= 1", "assign.theta")
        if not 0.0 < self.bag_threshold < 1.0:
            raise ConfigError("bag_threshold must lie in (0, 1)", "assign.bag_threshold")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]", "assign.alpha")
        if self.tau_ratio <= 0:
            raise ConfigError("tau_ratio must be positive", "assign.tau_ratio")
        if self.fixed_tau is not None and self.fixed_tau <= 0:
            raise ConfigError("fixed_tau must be positive when set", "assign.fixed_tau")
        if self.criteria not in CRITERIA_MODES:
            raise ConfigError(
                f"criteria must be one of {', '.join(CRITERIA_MODES)}", "assign.criteria"
            )


@dataclass(frozen=True)
class PredictionSnapshot:
    """Read-only copy of decoded predictions handed to the assigner.

    probabilities: [num_anchors, K] category probabilities (objectness merged).
    boxes: [num_anchors, 4] predicted corner boxes.
    """

    probabilities: np.ndarray
    boxes: np.ndarray

    def __post_init__(self):
        probs = np.array(self.probabilities, dtype=np.float64, copy=True)
        boxes = np.array(self.boxes, dtype=np.float64, copy=True).reshape(-1, 4)
        if probs.ndim != 2:
            raise InvalidInputError("Snapshot probabilities must be a [num_anchors, K] matrix.")
        if len(probs) != len(boxes):
            raise InvalidInputError(
                f"Snapshot has {len(probs)} probability rows but {len(boxes)} boxes."
            )
        if not np.all(np.isfinite(probs)) or np.any(probs < 0) or np.any(probs > 1):
            raise InvalidInputError("Snapshot probabilities must be finite and lie in [0, 1].")
        probs.flags.writeable = False
        boxes.flags.writeable = False
        object.__setattr__(self, "probabilities", probs)
        object.__setattr__(self, "boxes", boxes)

    @property
    def num_anchors(self) -> int:
        return self.probabilities.shape[0]

    @property
    def num_categories(self) -> int:
        return self.probabilities.shape[1]


@dataclass
class CandidateBag:
    """Adaptive candidate bag of one ground-truth object.

    Member arrays are aligned with ``members`` (ascending anchor index).
    ``fallback`` marks a bag whose joint likelihoods were all zero, in which
    case every matched anchor is a member and ranking uses the raw IoU.
    """

    object_index: int
    category: int
    members: np.ndarray
    threshold_t: float
    joint_likelihoods: np.ndarray
    probabilities: np.ndarray
    scaled_ious: np.ndarray
    ious: np.ndarray
    fallback: bool = False

    @property
    def size(self) -> int:
        return int(len(self.members))

    @property
    def ignored(self) -> bool:
        return self.size == 0


@dataclass
class AssignmentOutput:
    """Per-anchor targets and weights for one image."""

    matched_object: np.ndarray
    assigned_object: np.ndarray
    assigned_category: np.ndarray
    rank_cls: np.ndarray
    rank_reg: np.ndarray
    weight_cls: np.ndarray
    weight_reg: np.ndarray
    bags: List[CandidateBag] = field(default_factory=list)
    tau_cls: np.ndarray = field(default_factory=lambda: np.zeros(0))
    tau_reg: np.ndarray = field(default_factory=lambda: np.zeros(0))
    criteria_cls: List[np.ndarray] = field(default_factory=list)
    criteria_reg: List[np.ndarray] = field(default_factory=list)

    @property
    def num_anchors(self) -> int:
        return len(self.assigned_object)

    @property
    def num_assigned(self) -> int:
        return int(np.count_nonzero(self.assigned_object != UNASSIGNED))

    def mean_bag_size(self) -> float:
        sizes = [bag.size for bag in self.bags if not bag.ignored]
        return float(np.mean(sizes)) if sizes else 0.0

    def to_records(self) -> List[Dict[str, Any]]:
        """One flat record per bag member, for JSON inspection."""
        records = []
        for bag, v_cls, v_reg in zip(self.bags, self.criteria_cls, self.criteria_reg):
            for pos, anchor in enumerate(bag.members):
                records.append({
                    "object": int(bag.object_index),
                    "anchor": int(anchor),
                    "p": float(bag.probabilities[pos]),
                    "q": float(bag.scaled_ious[pos]),
                    "P": float(bag.joint_likelihoods[pos]),
                    "v_cls": float(v_cls[pos]),
                    "v_reg": float(v_reg[pos]),
                    "R_cls": int(self.rank_cls[anchor]),
                    "R_reg": int(self.rank_reg[anchor]),
                    "w_cls": float(self.weight_cls[anchor]),
                    "w_reg": float(self.weight_reg[anchor]),
                })
        return records


def match_gt(anchor_centers: np.ndarray, predicted_boxes: np.ndarray,
             gt_boxes: np.ndarray) -> np.ndarray:
    """Pick at most one object per anchor.

    An anchor is eligible for an object only when its center lies strictly
    inside the object's box; among eligible objects the one with the highest
    IoU against the anchor's predicted box wins. IoU ties go to the smaller
    box, then the lower object index. Returns object indices, UNASSIGNED
    for anchors inside no box.
    """
    centers = np.asarray(anchor_centers, dtype=np.float64).reshape(-1, 2)
    gt = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    matches = np.full(len(centers), UNASSIGNED, dtype=np.int64)
    if len(gt) == 0 or len(centers) == 0:
        return matches

    cx, cy = centers[:, 0:1], centers[:, 1:2]
    inside = (
        (cx > gt[None, :, 0]) & (cx < gt[None, :, 2])
        & (cy > gt[None, :, 1]) & (cy < gt[None, :, 3])
    )
    ious = pairwise_iou(predicted_boxes, gt)

    order = np.lexsort((np.arange(len(gt)), box_areas(gt)))
    scores = np.where(inside, ious, -1.0)[:, order]
    best = order[np.argmax(scores, axis=1)]

    eligible = inside.any(axis=1)
    matches[eligible] = best[eligible]
    return matches


def build_candidate_bags(snapshot: PredictionSnapshot, matches: np.ndarray,
                         gt: GroundTruth, cfg: AssignConfig) -> List[CandidateBag]:
    """Candidate bag per object: matched anchors with P_i >= b * max P."""
    bags = []
    for j in range(len(gt)):
        category = int(gt.categories[j])
        if not 0 <= category < snapshot.num_categories:
            raise InvalidInputError(
                f"Object {j} has category {category}, outside [0, {snapshot.num_categories})."
            )
        matched = np.flatnonzero(matches == j)
        if matched.size == 0:
            logger.debug("Object %d contains no anchor center; ignored.", j)
            empty = np.zeros(0)
            bags.append(CandidateBag(j, category, matched, 0.0, empty, empty, empty, empty))
            continue

        p = snapshot.probabilities[matched, category]
        raw = aligned_iou(snapshot.boxes[matched], np.repeat(gt.boxes[j:j + 1], matched.size, axis=0))
        q = raw ** cfg.theta
        joint = p * q
        peak = float(joint.max())

        if peak > 0:
            threshold = cfg.bag_threshold * peak
            keep = joint >= threshold
            fallback = False
        else:
            threshold = 0.0
            keep = np.ones(matched.size, dtype=bool)
            fallback = True

        bags.append(CandidateBag(
            object_index=j,
            category=category,
            members=matched[keep],
            threshold_t=threshold,
            joint_likelihoods=joint[keep],
            probabilities=p[keep],
            scaled_ious=q[keep],
            ious=raw[keep],
            fallback=fallback,
        ))
    return bags


Number = Union[float, np.ndarray]


def mutual_criteria(p: Number, q: Number, alpha: float) -> Tuple[Number, Number]:
    """Regularized ranking values: v_cls = q * p**alpha, v_reg = p * q**alpha."""
    p_arr = np.asarray(p, dtype=np.float64)
    q_arr = np.asarray(q, dtype=np.float64)
    v_cls = q_arr * np.power(p_arr, alpha)
    v_reg = p_arr * np.power(q_arr, alpha)
    if v_cls.ndim == 0:
        return float(v_cls), float(v_reg)
    return v_cls, v_reg


def rank_to_weights(values: Sequence[float], tau: float,
                    hard: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    """Descending ranks (ties by position) and their weights.

    Soft weights are exp(-R / tau); hard weights are 1 where R < tau.
    """
    if tau <= 0:
        raise InvalidInputError(f"Temperature must be positive, got {tau}.")
    values = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise InvalidInputError("Ranking values must be finite.")

    order = np.argsort(-values, kind="stable")
    ranks = np.empty(len(values), dtype=np.int64)
    ranks[order] = np.arange(len(values))

    if hard:
        weights = (ranks < tau).astype(np.float64)
    else:
        weights = np.exp(-ranks / tau)
    return ranks, weights


def bag_temperatures(bag_size: int, cfg: AssignConfig) -> Tuple[float, float]:
    """(tau_cls, tau_reg): sqrt of the bag size, or the fixed value, and its ratio."""
    tau_cls = cfg.fixed_tau if cfg.fixed_tau is not None else math.sqrt(bag_size)
    return tau_cls, cfg.tau_ratio * tau_cls


def _bag_criteria(bag: CandidateBag, cfg: AssignConfig) -> Tuple[np.ndarray, np.ndarray]:
    if bag.fallback:
        return bag.ious.copy(), bag.ious.copy()
    if cfg.criteria == "classification":
        return bag.probabilities.copy(), bag.probabilities.copy()
    if cfg.criteria == "regression":
        return bag.scaled_ious.copy(), bag.scaled_ious.copy()
    return mutual_criteria(bag.probabilities, bag.scaled_ious, cfg.alpha)


def musu_assign(snapshot: PredictionSnapshot, gt: GroundTruth, anchors: Any,
                cfg: Optional[AssignConfig] = None) -> AssignmentOutput:
    """Run the full assignment for one image.

    ``anchors`` is an AnchorLayout (anything with a ``centers`` array) or a
    plain [num_anchors, 2] array of anchor centers.
    """
    cfg = cfg or AssignConfig()
    centers = np.asarray(getattr(anchors, "centers", anchors), dtype=np.float64).reshape(-1, 2)
    n = snapshot.num_anchors
    if len(centers) != n:
        raise InvalidInputError(f"{len(centers)} anchor centers for {n} predictions.")

    matches = match_gt(centers, snapshot.boxes, gt.boxes)
    out = AssignmentOutput(
        matched_object=matches,
        assigned_object=np.full(n, UNASSIGNED, dtype=np.int64),
        assigned_category=np.full(n, UNASSIGNED, dtype=np.int64),
        rank_cls=np.full(n, UNASSIGNED, dtype=np.int64),
        rank_reg=np.full(n, UNASSIGNED, dtype=np.int64),
        weight_cls=np.zeros(n),
        weight_reg=np.zeros(n),
        tau_cls=np.full(len(gt), np.nan),
        tau_reg=np.full(len(gt), np.nan),
    )
    if len(gt) == 0:
        return out

    out.bags = build_candidate_bags(snapshot, matches, gt, cfg)
    for bag in out.bags:
        v_cls, v_reg = _bag_criteria(bag, cfg)
        out.criteria_cls.append(v_cls)
        out.criteria_reg.append(v_reg)
        if bag.ignored:
            continue

        tau_cls, tau_reg = bag_temperatures(bag.size, cfg)
        r_cls, w_cls = rank_to_weights(v_cls, tau_cls, cfg.hard_targets)
        r_reg, w_reg = rank_to_weights(v_reg, tau_reg, cfg.hard_targets)

        members = bag.members
        out.tau_cls[bag.object_index] = tau_cls
        out.tau_reg[bag.object_index] = tau_reg
        out.assigned_object[members] = bag.object_index
        out.assigned_category[members] = bag.category
        out.rank_cls[members] = r_cls
        out.rank_reg[members] = r_reg
        out.weight_cls[members] = w_cls
        out.weight_reg[members] = w_reg
    return out
