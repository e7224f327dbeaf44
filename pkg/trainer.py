"""
Training loop: decode, assign on the frozen snapshot, compute the loss,
chain the gradient to raw parameters and take an SGD-with-momentum step.

A direct-parameterized detector has no image input, so every scene owns
its own parameter table and momentum buffer. Checkpoints store all tables.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from assignment import AssignConfig, AssignmentOutput, musu_assign
from detector import (
    DEFAULT_PRIOR_PROB,
    AnchorLayout,
    DetectorParams,
    decode,
    init_detector,
    loss_and_gradients,
)
from errors import CheckpointError, ConfigError, TrainingDivergedError
from evaluation import pearson_correlation, snapshot_consistency
from losses import FocalParams, LossBreakdown
from scenes import Scene

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1

LOG_COLUMNS = [
    "step", "scene", "l_cls_pos", "l_cls_neg", "l_cls_bg", "l_reg", "l_total",
    "num_assigned", "mean_bag_size", "agreement", "pearson",
]


@dataclass
class TrainConfig:
    learning_rate: float = 0.5
    momentum: float = 0.9
    weight_decay: float = 0.0
    steps: int = 2000
    seed: int = 0
    log_every: int = 100
    metrics_every: int = 100
    prior_prob: float = DEFAULT_PRIOR_PROB
    assign: AssignConfig = field(default_factory=AssignConfig)
    focal: FocalParams = field(default_factory=FocalParams)

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError("must be >= 0", "train.learning_rate")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("must lie in [0, 1)", "train.momentum")
        if self.weight_decay < 0:
            raise ConfigError("must be >= 0", "train.weight_decay")
        if self.steps < 0:
            raise ConfigError("must be >= 0", "train.steps")
        if self.log_every < 0 or self.metrics_every < 0:
            raise ConfigError("must be >= 0", "train.log_every")
        if not 0.0 < self.prior_prob < 1.0:
            raise ConfigError("must lie in (0, 1)", "train.prior_prob")


class SGDMomentum:
    """Heavy-ball SGD over a DetectorParams table.

    velocity <- momentum * velocity + (grad + weight_decay * param)
    param    <- param - learning_rate * velocity
    """

    def __init__(self, learning_rate: float, momentum: float = 0.0, weight_decay: float = 0.0):
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity: Optional[np.ndarray] = None

    @classmethod
    def from_config(cls, config: TrainConfig) -> "SGDMomentum":
        return cls(config.learning_rate, config.momentum, config.weight_decay)

    def step(self, params: DetectorParams, grads: DetectorParams) -> DetectorParams:
        x = params.to_vector()
        g = grads.to_vector() + self.weight_decay * x
        if self.velocity is None:
            self.velocity = g
        else:
            self.velocity = self.momentum * self.velocity + g
        return params.with_vector(x - self.learning_rate * self.velocity)


def train_step(params: DetectorParams, layout: AnchorLayout, scene: Scene, config: TrainConfig,
               optimizer: Optional[SGDMomentum] = None
               ) -> Tuple[DetectorParams, LossBreakdown, AssignmentOutput]:
    """One decode -> assign -> loss -> update cycle. The input params are not modified."""
    gt = scene.ground_truth()
    snapshot = decode(params, layout)
    assignment = musu_assign(snapshot, gt, layout, config.assign)
    breakdown, grads = loss_and_gradients(params, layout, gt, assignment, config.focal)

    if not breakdown.is_finite() or not grads.is_finite():
        raise TrainingDivergedError(
            f"Non-finite loss or gradient (L_det={breakdown.l_total}).", step=-1
        )

    optimizer = optimizer or SGDMomentum.from_config(config)
    updated = optimizer.step(params, grads)
    if not updated.is_finite():
        raise TrainingDivergedError("Parameter update produced non-finite values.", step=-1)
    return updated, breakdown, assignment


def _scene_order(num_scenes: int, steps: int, seed: int) -> np.ndarray:
    """Visit order: one seeded permutation of the scenes per pass."""
    rng = np.random.default_rng(seed)
    passes = -(-steps // num_scenes) if steps else 0
    if passes == 0:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate([rng.permutation(num_scenes) for _ in range(passes)])[:steps]


def _dump_state(dump_dir: Optional[str], step: int, scene_index: int,
                params: DetectorParams, layout: AnchorLayout) -> Optional[str]:
    if dump_dir is None:
        return None
    path = Path(dump_dir) / f"diverged_step{step}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"step": step, "scene": scene_index, "layout": layout.to_dict(), "params": params.to_dict()}
    path.write_text(json.dumps(payload), encoding="utf-8")
    return str(path)


def train_run(scenes: Sequence[Scene], config: TrainConfig, layout: AnchorLayout,
              num_categories: int, dump_dir: Optional[str] = None
              ) -> Tuple[List[DetectorParams], pd.DataFrame]:
    """Train one parameter table per scene for ``config.steps`` steps.

    Returns the final tables (aligned with ``scenes``) and the per-step log.
    """
    if not scenes:
        raise ConfigError("training needs at least one scene", "scenes.num_scenes")

    initial = init_detector(layout, num_categories, config.prior_prob)
    params = [initial.copy() for _ in scenes]
    optimizers = [SGDMomentum.from_config(config) for _ in scenes]
    rows = []

    for step, scene_index in enumerate(_scene_order(len(scenes), config.steps, config.seed)):
        scene = scenes[scene_index]
        current = params[scene_index]
        try:
            updated, breakdown, assignment = train_step(
                current, layout, scene, config, optimizers[scene_index]
            )
        except TrainingDivergedError as e:
            dump_path = _dump_state(dump_dir, step, int(scene_index), current, layout)
            logger.error("Training diverged at step %d (scene %d); state dumped to %s",
                         step, scene_index, dump_path)
            raise TrainingDivergedError(f"Step {step}: {e}", step=step, dump_path=dump_path) from e

        row = {"step": step, "scene": int(scene_index), **breakdown.as_row(),
               "num_assigned": assignment.num_assigned,
               "mean_bag_size": assignment.mean_bag_size(),
               "agreement": np.nan, "pearson": np.nan}
        if config.metrics_every and step % config.metrics_every == 0:
            part = snapshot_consistency(decode(current, layout), scene.ground_truth(), layout, config.assign)
            if part.agreements:
                row["agreement"] = float(np.mean(part.agreements))
            row["pearson"] = pearson_correlation(part.pooled_p, part.pooled_iou)
        rows.append(row)

        if config.log_every and step % config.log_every == 0:
            logger.info("step %5d  scene %3d  L_det %.5f  L_cls %.5f  L_reg %.5f",
                        step, scene_index, breakdown.l_total, breakdown.l_cls, breakdown.l_reg)
        params[scene_index] = updated

    return params, pd.DataFrame(rows, columns=LOG_COLUMNS)


def save_checkpoint(path: str, params: Sequence[DetectorParams], layout: AnchorLayout,
                    config_hash: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "version": CHECKPOINT_VERSION,
        "config_hash": config_hash,
        "layout": layout.to_dict(),
        "params": [table.to_dict() for table in params],
    }
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path


def load_checkpoint(path: str) -> Tuple[List[DetectorParams], AnchorLayout, str]:
    """Returns (per-scene params, layout, config hash)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}. Run 'train' first.")
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{path}: not valid JSON ({e})") from e
    except UnicodeDecodeError as e:
        raise CheckpointError(f"{path}: byte {e.start}: not valid UTF-8 ({e.reason})") from e
    if not isinstance(payload, dict) or payload.get("version") != CHECKPOINT_VERSION:
        found = payload.get("version") if isinstance(payload, dict) else None
        raise CheckpointError(f"{path}: unsupported checkpoint version {found!r}")
    try:
        layout = AnchorLayout.from_dict(payload["layout"])
        params = [DetectorParams.from_dict(table) for table in payload["params"]]
    except (KeyError, TypeError, ConfigError) as e:
        raise CheckpointError(f"{path}: missing or malformed field ({e})") from e
    return params, layout, str(payload.get("config_hash", ""))
