"""
Box geometry for the assignment lab: IoU, GIoU loss with analytic
gradients, and class-wise non-maximum suppression.

Boxes are corner-form (x1, y1, x2, y2) in image units. Batched helpers take
float arrays of shape [N, 4]; the scalar helpers wrap them.
"""

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from errors import InvalidInputError


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle, (left, top, right, bottom)."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x1 <= self.x2 and self.y1 <= self.y2):
            raise InvalidInputError(
                f"Invalid box ({self.x1}, {self.y1}, {self.x2}, {self.y2}): "
                "expected x1 <= x2 and y1 <= y2."
            )

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> Tuple[float, float]:
        return (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.y1, self.x2, self.y2], dtype=np.float64)

    def as_list(self) -> List[float]:
        return [float(self.x1), float(self.y1), float(self.x2), float(self.y2)]

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "Box":
        x1, y1, x2, y2 = (float(v) for v in values)
        return cls(x1, y1, x2, y2)


@dataclass(frozen=True)
class Detection:
    """A scored, categorized box emitted by inference."""

    box: Box
    category: int
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise InvalidInputError(f"Detection score {self.score} outside [0, 1].")


@dataclass(frozen=True)
class GroundTruth:
    """Ground-truth objects of one scene as aligned arrays."""

    boxes: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    categories: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        boxes = np.asarray(self.boxes, dtype=np.float64).reshape(-1, 4)
        categories = np.asarray(self.categories, dtype=np.int64).reshape(-1)
        if len(boxes) != len(categories):
            raise InvalidInputError(
                f"Ground truth has {len(boxes)} boxes but {len(categories)} categories."
            )
        object.__setattr__(self, "boxes", boxes)
        object.__setattr__(self, "categories", categories)

    def __len__(self) -> int:
        return len(self.boxes)

    @classmethod
    def from_objects(cls, objects: Sequence[Tuple[Box, int]]) -> "GroundTruth":
        if not objects:
            return cls()
        return cls(
            boxes=np.stack([box.as_array() for box, _ in objects]),
            categories=np.array([category for _, category in objects], dtype=np.int64),
        )


def box_areas(boxes: np.ndarray) -> np.ndarray:
    boxes = np.asarray(boxes, dtype=np.float64)
    return (boxes[..., 2] - boxes[..., 0]) * (boxes[..., 3] - boxes[..., 1])


def pairwise_iou(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """IoU matrix of shape [N, M] between two box arrays.

    Pairs whose union has zero area (two degenerate boxes) get IoU 0.
    """
    a = np.asarray(boxes_a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(boxes_b, dtype=np.float64).reshape(-1, 4)

    lt = np.maximum(a[:, None, :2], b[None, :, :2])
    rb = np.minimum(a[:, None, 2:], b[None, :, 2:])
    wh = np.clip(rb - lt, 0.0, None)
    inter = wh[..., 0] * wh[..., 1]
    union = box_areas(a)[:, None] + box_areas(b)[None, :] - inter

    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def aligned_iou(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """Element-wise IoU of two aligned [N, 4] arrays."""
    a = np.asarray(boxes_a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(boxes_b, dtype=np.float64).reshape(-1, 4)

    iw = np.clip(np.minimum(a[:, 2], b[:, 2]) - np.maximum(a[:, 0], b[:, 0]), 0.0, None)
    ih = np.clip(np.minimum(a[:, 3], b[:, 3]) - np.maximum(a[:, 1], b[:, 1]), 0.0, None)
    inter = iw * ih
    union = box_areas(a) + box_areas(b) - inter

    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes, 0 when disjoint or both degenerate."""
    return float(aligned_iou(a.as_array(), b.as_array())[0])


def giou_loss_batch(pred: np.ndarray, gt: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Loss 1 - GIoU and its gradient w.r.t. the predicted corners.

    Returns (loss [N], grad [N, 4]). Ground-truth boxes must have positive
    area; degenerate predictions are handled by the same formulas because
    the union and the enclosing box stay positive.
    """
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 4)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 4)
    if np.any(box_areas(gt) <= 0):
        raise InvalidInputError("GIoU target boxes must have positive area.")

    px1, py1, px2, py2 = pred.T
    gx1, gy1, gx2, gy2 = gt.T
    pw, ph = px2 - px1, py2 - py1

    iw = np.minimum(px2, gx2) - np.maximum(px1, gx1)
    ih = np.minimum(py2, gy2) - np.maximum(py1, gy1)
    overlap = (iw > 0) & (ih > 0)
    iw_c = np.where(overlap, iw, 0.0)
    ih_c = np.where(overlap, ih, 0.0)
    inter = iw_c * ih_c
    union = pw * ph + box_areas(gt) - inter

    cw = np.maximum(px2, gx2) - np.minimum(px1, gx1)
    ch = np.maximum(py2, gy2) - np.minimum(py1, gy1)
    enclose = cw * ch

    iou_val = inter / union
    loss = 2.0 - iou_val - union / enclose

    # Partials of the predicted area, intersection and enclosure, column order x1, y1, x2, y2.
    d_area = np.stack([-ph, -pw, ph, pw], axis=1)
    d_inter = np.stack(
        [
            -ih_c * (px1 >= gx1),
            -iw_c * (py1 >= gy1),
            ih_c * (px2 <= gx2),
            iw_c * (py2 <= gy2),
        ],
        axis=1,
    )
    d_enclose = np.stack(
        [
            -ch * (px1 <= gx1),
            -cw * (py1 <= gy1),
            ch * (px2 >= gx2),
            cw * (py2 >= gy2),
        ],
        axis=1,
    )
    d_union = d_area - d_inter

    u = union[:, None]
    c = enclose[:, None]
    d_iou = (d_inter * u - inter[:, None] * d_union) / u**2
    d_ratio = (d_union * c - u * d_enclose) / c**2
    grad = -d_iou - d_ratio
    return loss, grad


def giou_loss(pred: Box, gt: Box) -> Tuple[float, np.ndarray]:
    """1 - GIoU for a single pair, with the 4-vector gradient w.r.t. pred."""
    loss, grad = giou_loss_batch(pred.as_array(), gt.as_array())
    return float(loss[0]), grad[0]


def nms(detections: Sequence[Detection], iou_threshold: float,
        score_threshold: float) -> List[Detection]:
    """Class-wise greedy non-maximum suppression.

    Detections below score_threshold are dropped first. The survivors are
    visited by descending score (ties by input order); a detection is kept
    unless a kept detection of the same category overlaps it with
    IoU > iou_threshold. Output is sorted by descending score.
    """
    if not 0.0 <= iou_threshold <= 1.0 or not 0.0 <= score_threshold <= 1.0:
        raise InvalidInputError("NMS thresholds must lie in [0, 1].")

    candidates = [d for d in detections if d.score >= score_threshold]
    if not candidates:
        return []

    scores = np.array([d.score for d in candidates])
    order = np.argsort(-scores, kind="stable")
    boxes = np.stack([d.box.as_array() for d in candidates])
    categories = np.array([d.category for d in candidates])

    kept: List[int] = []
    for category in np.unique(categories):
        idx = order[categories[order] == category]
        suppressed = np.zeros(len(idx), dtype=bool)
        overlaps = pairwise_iou(boxes[idx], boxes[idx])
        for pos in range(len(idx)):
            if suppressed[pos]:
                continue
            kept.append(int(idx[pos]))
            suppressed[pos + 1:] |= overlaps[pos, pos + 1:] > iou_threshold

    kept_sorted = sorted(kept, key=lambda i: (-candidates[i].score, i))
    return [candidates[i] for i in kept_sorted]
