"""
Direct-parameterized dense detector.

There is no network: every anchor owns a row of category logits, one
objectness logit and four raw box offsets. Decoding merges the objectness
into the category scores by multiplication and turns the offsets into
non-negative ltrb distances scaled by the anchor's stride, scale and ratio,
so zero offsets reproduce a 2s x 2s box (times sigma, split by sqrt(rho)).
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from assignment import AssignmentOutput, PredictionSnapshot
from errors import CheckpointError, ConfigError
from geometry import GroundTruth
from losses import FocalParams, LossBreakdown, LossGradients, total_loss

logger = logging.getLogger(__name__)

SCALE_RANGE = (1.0, 2.0)
RATIO_RANGE = (0.5, 2.0)
DEFAULT_PRIOR_PROB = 0.01

# Sign of each ltrb side in the corner it moves: x1 = cx - l, y1 = cy - t, x2 = cx + r, y2 = cy + b.
_SIDE_SIGN = np.array([-1.0, -1.0, 1.0, 1.0])


@dataclass
class LayoutConfig:
    """Anchor tiling: levels as [grid_h, grid_w, stride] and anchors per location."""

    levels: List[List[float]] = field(default_factory=lambda: [[16, 16, 8]])
    anchors_per_location: int = 1
    seed: int = 0
    slot_scales: Optional[List[float]] = None
    slot_ratios: Optional[List[float]] = None

    def __post_init__(self):
        if not self.levels:
            raise ConfigError("at least one level is required", "layout.levels")
        for i, level in enumerate(self.levels):
            if len(level) != 3 or level[0] < 1 or level[1] < 1 or level[2] <= 0:
                raise ConfigError(
                    "each level must be [grid_h >= 1, grid_w >= 1, stride > 0]",
                    f"layout.levels[{i}]",
                )
        if self.anchors_per_location < 1:
            raise ConfigError("must be >= 1", "layout.anchors_per_location")
        for name, values, bounds in (
            ("slot_scales", self.slot_scales, SCALE_RANGE),
            ("slot_ratios", self.slot_ratios, RATIO_RANGE),
        ):
            if values is None:
                continue
            if len(values) != self.anchors_per_location:
                raise ConfigError("needs one value per anchor slot", f"layout.{name}")
            if any(not bounds[0] <= v <= bounds[1] for v in values):
                raise ConfigError(f"values must lie in {list(bounds)}", f"layout.{name}")


@dataclass
class AnchorLayout:
    """Flattened anchors, ordered level -> row -> column -> slot."""

    levels: List[Tuple[int, int, float]]
    anchors_per_location: int
    slot_scales: np.ndarray
    slot_ratios: np.ndarray
    centers: np.ndarray
    strides: np.ndarray
    slots: np.ndarray
    locations: np.ndarray

    @property
    def num_anchors(self) -> int:
        return len(self.centers)

    @property
    def scales(self) -> np.ndarray:
        return self.slot_scales[self.slots]

    @property
    def ratios(self) -> np.ndarray:
        return self.slot_ratios[self.slots]

    def base_sides(self) -> np.ndarray:
        """ltrb distances at zero offset, shape [N, 4]."""
        root = np.sqrt(self.ratios)
        half_w = self.strides * self.scales * root
        half_h = self.strides * self.scales / root
        return np.stack([half_w, half_h, half_w, half_h], axis=1)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "levels": [[int(h), int(w), float(s)] for h, w, s in self.levels],
            "anchors_per_location": int(self.anchors_per_location),
            "slot_scales": self.slot_scales.tolist(),
            "slot_ratios": self.slot_ratios.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AnchorLayout":
        config = LayoutConfig(
            levels=data["levels"],
            anchors_per_location=data["anchors_per_location"],
            slot_scales=data["slot_scales"],
            slot_ratios=data["slot_ratios"],
        )
        return build_anchor_layout(config)


def build_anchor_layout(config: LayoutConfig) -> AnchorLayout:
    """Tile anchors over every level.

    A single slot uses sigma = rho = 1. With several slots, sigma and rho
    are drawn uniformly from [1, 2] and [1/2, 2] with ``config.seed`` unless
    given explicitly.
    """
    a = config.anchors_per_location
    rng = np.random.default_rng(config.seed)
    if config.slot_scales is not None:
        scales = np.asarray(config.slot_scales, dtype=np.float64)
    elif a == 1:
        scales = np.ones(1)
    else:
        scales = rng.uniform(*SCALE_RANGE, size=a)
    if config.slot_ratios is not None:
        ratios = np.asarray(config.slot_ratios, dtype=np.float64)
    elif a == 1:
        ratios = np.ones(1)
    else:
        ratios = rng.uniform(*RATIO_RANGE, size=a)

    centers, strides, slots, locations = [], [], [], []
    location = 0
    levels = []
    for grid_h, grid_w, stride in config.levels:
        grid_h, grid_w, stride = int(grid_h), int(grid_w), float(stride)
        levels.append((grid_h, grid_w, stride))
        ys, xs = np.meshgrid(np.arange(grid_h), np.arange(grid_w), indexing="ij")
        level_centers = np.stack([(xs.ravel() + 0.5) * stride, (ys.ravel() + 0.5) * stride], axis=1)
        count = len(level_centers)
        centers.append(np.repeat(level_centers, a, axis=0))
        strides.append(np.full(count * a, stride))
        slots.append(np.tile(np.arange(a), count))
        locations.append(np.repeat(np.arange(location, location + count), a))
        location += count

    return AnchorLayout(
        levels=levels,
        anchors_per_location=a,
        slot_scales=scales,
        slot_ratios=ratios,
        centers=np.concatenate(centers),
        strides=np.concatenate(strides),
        slots=np.concatenate(slots),
        locations=np.concatenate(locations),
    )


@dataclass
class DetectorParams:
    """Trainable table: category logits [N, K], objectness [N], offsets [N, 4]."""

    cls_logits: np.ndarray
    obj_logits: np.ndarray
    box_offsets: np.ndarray

    @property
    def num_anchors(self) -> int:
        return self.cls_logits.shape[0]

    @property
    def num_categories(self) -> int:
        return self.cls_logits.shape[1]

    def copy(self) -> "DetectorParams":
        return DetectorParams(self.cls_logits.copy(), self.obj_logits.copy(), self.box_offsets.copy())

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.cls_logits.ravel(), self.obj_logits.ravel(), self.box_offsets.ravel()])

    def with_vector(self, vector: np.ndarray) -> "DetectorParams":
        """New params of the same shape filled from a flat vector."""
        n, k = self.cls_logits.shape
        vector = np.asarray(vector, dtype=np.float64)
        return DetectorParams(
            cls_logits=vector[: n * k].reshape(n, k).copy(),
            obj_logits=vector[n * k: n * k + n].copy(),
            box_offsets=vector[n * k + n:].reshape(n, 4).copy(),
        )

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.to_vector())))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "cls_logits": self.cls_logits.tolist(),
            "obj_logits": self.obj_logits.tolist(),
            "box_offsets": self.box_offsets.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DetectorParams":
        try:
            params = cls(
                cls_logits=np.asarray(data["cls_logits"], dtype=np.float64),
                obj_logits=np.asarray(data["obj_logits"], dtype=np.float64),
                box_offsets=np.asarray(data["box_offsets"], dtype=np.float64).reshape(-1, 4),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise CheckpointError(f"Malformed detector parameters: {e}") from e
        if params.cls_logits.ndim != 2 or len(params.obj_logits) != params.num_anchors \
                or len(params.box_offsets) != params.num_anchors:
            raise CheckpointError("Detector parameter arrays have inconsistent shapes.")
        return params


def sigmoid(x: np.ndarray) -> np.ndarray:
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def prior_logit(prior_prob: float = DEFAULT_PRIOR_PROB) -> float:
    return float(-np.log((1.0 - prior_prob) / prior_prob))


def init_detector(layout: AnchorLayout, num_categories: int,
                  prior_prob: float = DEFAULT_PRIOR_PROB) -> DetectorParams:
    """Zero box offsets, zero objectness, category logits at the prior."""
    if num_categories < 1:
        raise ConfigError("must be >= 1", "scenes.num_categories")
    n = layout.num_anchors
    return DetectorParams(
        cls_logits=np.full((n, num_categories), prior_logit(prior_prob)),
        obj_logits=np.zeros(n),
        box_offsets=np.zeros((n, 4)),
    )


@dataclass
class _Forward:
    sig_cls: np.ndarray
    sig_obj: np.ndarray
    sides: np.ndarray
    snapshot: PredictionSnapshot


def _forward(params: DetectorParams, layout: AnchorLayout) -> _Forward:
    sig_cls = sigmoid(params.cls_logits)
    sig_obj = sigmoid(params.obj_logits)
    probs = sig_cls * sig_obj[:, None]

    sides = layout.base_sides() * np.exp(params.box_offsets)
    cx, cy = layout.centers[:, 0], layout.centers[:, 1]
    boxes = np.stack([cx - sides[:, 0], cy - sides[:, 1], cx + sides[:, 2], cy + sides[:, 3]], axis=1)
    return _Forward(sig_cls, sig_obj, sides, PredictionSnapshot(probabilities=probs, boxes=boxes))


def decode(params: DetectorParams, layout: AnchorLayout) -> PredictionSnapshot:
    """Probabilities and corner boxes for every anchor."""
    if params.num_anchors != layout.num_anchors:
        raise ConfigError(
            f"parameters cover {params.num_anchors} anchors, layout has {layout.num_anchors}",
            "layout",
        )
    return _forward(params, layout).snapshot


def _chain(fwd: _Forward, grads: LossGradients) -> DetectorParams:
    g = grads.probabilities
    d_cls = g * fwd.sig_obj[:, None] * fwd.sig_cls * (1.0 - fwd.sig_cls)
    d_obj = np.sum(g * fwd.sig_cls, axis=1) * fwd.sig_obj * (1.0 - fwd.sig_obj)
    d_off = grads.boxes * _SIDE_SIGN * fwd.sides
    return DetectorParams(cls_logits=d_cls, obj_logits=d_obj, box_offsets=d_off)


def backward(params: DetectorParams, layout: AnchorLayout,
             grads: LossGradients) -> DetectorParams:
    """Chain output gradients through the sigmoids and the exp to raw parameters."""
    return _chain(_forward(params, layout), grads)


def loss_and_gradients(params: DetectorParams, layout: AnchorLayout, gt: GroundTruth,
                       assignment: AssignmentOutput,
                       focal: FocalParams) -> Tuple[LossBreakdown, DetectorParams]:
    """Detection loss under a fixed assignment and its raw-parameter gradient."""
    fwd = _forward(params, layout)
    breakdown, grads = total_loss(fwd.snapshot, assignment, gt, focal)
    return breakdown, _chain(fwd, grads)
