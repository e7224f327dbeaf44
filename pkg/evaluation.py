"""
Inference, COCO-style average precision, and classification/regression
consistency diagnostics.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from assignment import AssignConfig, PredictionSnapshot, musu_assign
from detector import AnchorLayout, DetectorParams, decode
from errors import ConfigError, EvaluationError
from geometry import Box, Detection, GroundTruth, aligned_iou, nms, pairwise_iou
from scenes import Scene

logger = logging.getLogger(__name__)

COCO_IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
RECALL_POINTS = np.linspace(0.0, 1.0, 101)


@dataclass
class EvalConfig:
    score_threshold: float = 0.05
    nms_threshold: float = 0.6
    max_detections: int = 100
    dump_pr_curves: bool = False
    workers: int = 1

    def __post_init__(self):
        if not 0.0 <= self.score_threshold <= 1.0:
            raise ConfigError("must lie in [0, 1]", "eval.score_threshold")
        if not 0.0 <= self.nms_threshold <= 1.0:
            raise ConfigError("must lie in [0, 1]", "eval.nms_threshold")
        if self.max_detections < 1:
            raise ConfigError("must be >= 1", "eval.max_detections")
        if self.workers < 1:
            raise ConfigError("must be >= 1", "eval.workers")


@dataclass
class EvalReport:
    ap_per_iou: Dict[float, float] = field(default_factory=dict)
    ap_coco: float = 0.0
    ap50: float = 0.0
    ap75: float = 0.0
    agreement_rate: float = float("nan")
    pearson: float = float("nan")

    def to_dict(self) -> Dict[str, Any]:
        def clean(value: float) -> Optional[float]:
            return None if value is None or not np.isfinite(value) else float(value)

        return {
            "ap_per_iou": {f"{k:.2f}": float(v) for k, v in sorted(self.ap_per_iou.items())},
            "ap_coco": float(self.ap_coco),
            "ap50": float(self.ap50),
            "ap75": float(self.ap75),
            "consistency": {
                "agreement_rate": clean(self.agreement_rate),
                "pearson_p_vs_iou": clean(self.pearson),
            },
        }


def run_inference(params: DetectorParams, layout: AnchorLayout, score_threshold: float = 0.05,
                  nms_threshold: float = 0.6,
                  max_detections: Optional[int] = None) -> List[Detection]:
    """Decode, keep each anchor's best category above the threshold, then NMS."""
    snapshot = decode(params, layout)
    categories = np.argmax(snapshot.probabilities, axis=1)
    scores = snapshot.probabilities[np.arange(snapshot.num_anchors), categories]
    keep = np.flatnonzero(scores >= score_threshold)
    candidates = [
        Detection(Box.from_array(snapshot.boxes[i]), int(categories[i]), float(scores[i]))
        for i in keep
    ]
    detections = nms(candidates, nms_threshold, score_threshold)
    if max_detections is not None:
        detections = detections[:max_detections]
    return detections


def _category_pr(detections_per_scene: Sequence[Sequence[Detection]],
                 gt_per_scene: Sequence[GroundTruth], category: int,
                 iou_threshold: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Scores, recall and precision of one category, pooled over scenes."""
    pooled = []
    for scene_index, detections in enumerate(detections_per_scene):
        for det_index, det in enumerate(detections):
            if det.category == category:
                pooled.append((det.score, scene_index, det_index, det.box.as_array()))
    pooled.sort(key=lambda item: (-item[0], item[1], item[2]))

    gt_boxes = [gt.boxes[gt.categories == category] for gt in gt_per_scene]
    used = [np.zeros(len(boxes), dtype=bool) for boxes in gt_boxes]
    n_gt = sum(len(boxes) for boxes in gt_boxes)

    hits = np.zeros(len(pooled))
    for rank, (_, scene_index, _, box) in enumerate(pooled):
        candidates = gt_boxes[scene_index]
        if len(candidates) == 0:
            continue
        overlaps = pairwise_iou(box[None], candidates)[0]
        overlaps[used[scene_index]] = -1.0
        best = int(np.argmax(overlaps))
        if overlaps[best] >= iou_threshold:
            used[scene_index][best] = True
            hits[rank] = 1.0

    scores = np.array([item[0] for item in pooled])
    true_pos = np.cumsum(hits)
    recall = true_pos / max(n_gt, 1)
    precision = true_pos / np.arange(1, len(pooled) + 1)
    return scores, recall, precision


def _interpolated_ap(recall: np.ndarray, precision: np.ndarray) -> float:
    if len(recall) == 0:
        return 0.0
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    sampled = np.where(idx < len(recall), envelope[np.minimum(idx, len(recall) - 1)], 0.0)
    return float(np.mean(sampled))


def _gt_categories(gt_per_scene: Sequence[GroundTruth]) -> List[int]:
    present = sorted({int(c) for gt in gt_per_scene for c in gt.categories})
    if not present:
        raise EvaluationError("Average precision is undefined without any ground-truth object.")
    return present


def average_precision(detections_per_scene: Sequence[Sequence[Detection]],
                      gt_per_scene: Sequence[GroundTruth], iou_threshold: float) -> float:
    """101-point interpolated AP, per category over all scenes, meaned over
    the categories present in the ground truth."""
    if len(detections_per_scene) != len(gt_per_scene):
        raise EvaluationError(
            f"{len(detections_per_scene)} detection lists for {len(gt_per_scene)} scenes."
        )
    aps = []
    for category in _gt_categories(gt_per_scene):
        _, recall, precision = _category_pr(detections_per_scene, gt_per_scene, category, iou_threshold)
        aps.append(_interpolated_ap(recall, precision))
    return float(np.mean(aps))


def pr_curves(detections_per_scene: Sequence[Sequence[Detection]],
              gt_per_scene: Sequence[GroundTruth],
              thresholds: Sequence[float] = COCO_IOU_THRESHOLDS) -> pd.DataFrame:
    """Long-form precision/recall table for external plotting."""
    rows = []
    for threshold in thresholds:
        for category in _gt_categories(gt_per_scene):
            scores, recall, precision = _category_pr(detections_per_scene, gt_per_scene, category, threshold)
            for rank in range(len(scores)):
                rows.append({
                    "iou_threshold": threshold,
                    "category": category,
                    "rank": rank,
                    "score": scores[rank],
                    "recall": recall[rank],
                    "precision": precision[rank],
                })
    columns = ["iou_threshold", "category", "rank", "score", "recall", "precision"]
    return pd.DataFrame(rows, columns=columns)


def object_agreement(probabilities: np.ndarray, ious: np.ndarray) -> bool:
    """Whether the best-scored and the best-localized anchors coincide."""
    return int(np.argmax(probabilities)) == int(np.argmax(ious))


def pearson_correlation(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) < 2 or np.std(x) == 0 or np.std(y) == 0:
        return float("nan")
    return float(np.corrcoef(x, y)[0, 1])


@dataclass
class SceneConsistency:
    agreements: List[bool] = field(default_factory=list)
    pooled_p: List[float] = field(default_factory=list)
    pooled_iou: List[float] = field(default_factory=list)


def snapshot_consistency(snapshot: PredictionSnapshot, gt: GroundTruth, anchors: Any,
                         assign_config: AssignConfig) -> SceneConsistency:
    """Per-object argmax agreement over in-box anchors, plus the (p, IoU)
    pairs of every candidate bag with at least two members."""
    centers = np.asarray(getattr(anchors, "centers", anchors), dtype=np.float64)
    result = SceneConsistency()
    for j in range(len(gt)):
        x1, y1, x2, y2 = gt.boxes[j]
        inbox = np.flatnonzero(
            (centers[:, 0] > x1) & (centers[:, 0] < x2) & (centers[:, 1] > y1) & (centers[:, 1] < y2)
        )
        if inbox.size == 0:
            continue
        p = snapshot.probabilities[inbox, gt.categories[j]]
        ious = aligned_iou(snapshot.boxes[inbox], np.repeat(gt.boxes[j:j + 1], inbox.size, axis=0))
        result.agreements.append(object_agreement(p, ious))

    assignment = musu_assign(snapshot, gt, centers, assign_config)
    for bag in assignment.bags:
        if bag.size >= 2:
            result.pooled_p.extend(bag.probabilities.tolist())
            result.pooled_iou.extend(bag.ious.tolist())
    return result


def _params_for(params: Union[DetectorParams, Sequence[DetectorParams]], count: int) -> List[DetectorParams]:
    if isinstance(params, DetectorParams):
        return [params] * count
    params = list(params)
    if len(params) != count:
        raise EvaluationError(f"{len(params)} parameter tables for {count} scenes.")
    return params


def consistency_metrics(params: Union[DetectorParams, Sequence[DetectorParams]],
                        layout: AnchorLayout, scenes: Sequence[Scene],
                        assign_config: AssignConfig) -> Tuple[float, float]:
    """(agreement rate over objects, pooled Pearson of p vs IoU over bag members)."""
    tables = _params_for(params, len(scenes))
    merged = SceneConsistency()
    for table, scene in zip(tables, scenes):
        part = snapshot_consistency(decode(table, layout), scene.ground_truth(), layout, assign_config)
        merged.agreements.extend(part.agreements)
        merged.pooled_p.extend(part.pooled_p)
        merged.pooled_iou.extend(part.pooled_iou)
    rate = float(np.mean(merged.agreements)) if merged.agreements else float("nan")
    return rate, pearson_correlation(merged.pooled_p, merged.pooled_iou)


def evaluate(params: Union[DetectorParams, Sequence[DetectorParams]], layout: AnchorLayout,
             scenes: Sequence[Scene], assign_config: AssignConfig,
             config: Optional[EvalConfig] = None) -> Tuple[EvalReport, Optional[pd.DataFrame]]:
    """Full report over a scene set; the PR table is returned when requested."""
    config = config or EvalConfig()
    tables = _params_for(params, len(scenes))

    def infer(table: DetectorParams) -> List[Detection]:
        return run_inference(table, layout, config.score_threshold, config.nms_threshold,
                             config.max_detections)

    # map() keeps scene order, so the merge is deterministic.
    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        detections = list(pool.map(infer, tables))
    gts = [scene.ground_truth() for scene in scenes]

    report = EvalReport()
    for threshold in COCO_IOU_THRESHOLDS:
        report.ap_per_iou[threshold] = average_precision(detections, gts, threshold)
    report.ap_coco = float(np.mean(list(report.ap_per_iou.values())))
    report.ap50 = report.ap_per_iou[0.5]
    report.ap75 = report.ap_per_iou[0.75]
    report.agreement_rate, report.pearson = consistency_metrics(tables, layout, scenes, assign_config)

    logger.info("AP %.4f  AP50 %.4f  AP75 %.4f  agreement %.3f",
                report.ap_coco, report.ap50, report.ap75, report.agreement_rate)
    curves = pr_curves(detections, gts) if config.dump_pr_curves else None
    return report, curves
