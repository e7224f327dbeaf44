"""
Synthetic scenes: seeded ground-truth rectangles with categories, plus the
JSON scene-file format.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import ConfigError, SceneFileError, SceneGenerationError
from geometry import Box, GroundTruth, aligned_iou

logger = logging.getLogger(__name__)

SCENE_FILE_VERSION = 1


@dataclass(frozen=True)
class SceneObject:
    box: Box
    category: int


@dataclass(frozen=True)
class Scene:
    """One image worth of ground truth."""

    extent: Tuple[float, float]
    objects: Tuple[SceneObject, ...] = ()

    def ground_truth(self) -> GroundTruth:
        return GroundTruth.from_objects([(o.box, o.category) for o in self.objects])


@dataclass
class SceneSetConfig:
    """Parameters of the scene generator."""

    num_scenes: int = 20
    num_categories: int = 5
    max_objects: int = 5
    min_side: float = 24.0
    max_side: float = 80.0
    max_pairwise_iou: float = 0.3
    extent: List[float] = field(default_factory=lambda: [128.0, 128.0])
    seed: int = 0
    max_attempts: int = 1000
    max_scene_restarts: int = 100

    def __post_init__(self):
        if self.num_scenes < 0:
            raise ConfigError("must be >= 0", "scenes.num_scenes")
        if self.num_categories < 1:
            raise ConfigError("must be >= 1", "scenes.num_categories")
        if self.max_objects < 1:
            raise ConfigError("must be >= 1", "scenes.max_objects")
        if not 0 < self.min_side <= self.max_side:
            raise ConfigError("need 0 < min_side <= max_side", "scenes.min_side")
        if not 0.0 <= self.max_pairwise_iou < 1.0:
            raise ConfigError("must lie in [0, 1)", "scenes.max_pairwise_iou")
        if len(self.extent) != 2 or min(self.extent) <= 0:
            raise ConfigError("must be [width, height] with positive values", "scenes.extent")
        if self.max_attempts < 1:
            raise ConfigError("must be >= 1", "scenes.max_attempts")
        if self.max_scene_restarts < 1:
            raise ConfigError("must be >= 1", "scenes.max_scene_restarts")


def _sample_box(rng: np.random.Generator, config: SceneSetConfig) -> np.ndarray:
    width, height = config.extent
    lo, hi = int(np.ceil(config.min_side)), int(np.floor(config.max_side))
    w = int(rng.integers(lo, hi + 1))
    h = int(rng.integers(lo, hi + 1))
    x1 = int(rng.integers(0, int(width) - w + 1))
    y1 = int(rng.integers(0, int(height) - h + 1))
    return np.array([x1, y1, x1 + w, y1 + h], dtype=np.float64)


def _place_objects(rng: np.random.Generator, config: SceneSetConfig,
                   target: int) -> Optional[List[np.ndarray]]:
    """Place ``target`` boxes under the overlap bound, or None if one runs out of attempts."""
    boxes: List[np.ndarray] = []
    for _ in range(target):
        for _ in range(config.max_attempts):
            candidate = _sample_box(rng, config)
            if not boxes:
                break
            overlaps = aligned_iou(np.stack(boxes), np.repeat(candidate[None], len(boxes), axis=0))
            if overlaps.max() <= config.max_pairwise_iou:
                break
        else:
            return None
        boxes.append(candidate)
    return boxes


def generate_scenes(config: SceneSetConfig) -> List[Scene]:
    """Rejection-sample scenes; deterministic for a given seed.

    Boxes have integer corners, sides in [min_side, max_side], lie inside the
    extent, and overlap earlier boxes of the scene by at most
    max_pairwise_iou. Every scene holds at least one object. A scene whose
    placement gets stuck keeps its object count and has all of its boxes
    resampled from scratch, up to max_scene_restarts times.
    """
    width, height = config.extent
    if int(np.ceil(config.min_side)) > min(int(width), int(height)) \
            or int(np.ceil(config.min_side)) > int(np.floor(config.max_side)):
        raise SceneGenerationError(
            f"min_side={config.min_side} cannot fit an integer box inside extent "
            f"{config.extent} with max_side={config.max_side}."
        )

    rng = np.random.default_rng(config.seed)
    scenes = []
    restarts = 0
    for scene_index in range(config.num_scenes):
        target = int(rng.integers(1, config.max_objects + 1))
        for _ in range(config.max_scene_restarts):
            boxes = _place_objects(rng, config, target)
            if boxes is not None:
                break
            restarts += 1
        else:
            raise SceneGenerationError(
                f"Scene {scene_index}: could not place all objects within "
                f"{config.max_attempts} attempts each after {config.max_scene_restarts} "
                f"scene restarts under max_pairwise_iou={config.max_pairwise_iou}; "
                f"relax the overlap or side constraints."
            )
        objects = [SceneObject(Box.from_array(b), int(rng.integers(0, config.num_categories)))
                   for b in boxes]
        scenes.append(Scene(extent=(float(width), float(height)), objects=tuple(objects)))

    if restarts:
        logger.debug("Scene generation restarted %d scenes.", restarts)
    logger.info("Generated %d scenes with %d objects.", len(scenes),
                sum(len(s.objects) for s in scenes))
    return scenes


def scenes_to_dict(scenes: Sequence[Scene], extent: Sequence[float]) -> Dict[str, Any]:
    return {
        "version": SCENE_FILE_VERSION,
        "extent": [float(extent[0]), float(extent[1])],
        "scenes": [
            {"objects": [{"box": o.box.as_list(), "category": int(o.category)} for o in s.objects]}
            for s in scenes
        ],
    }


def save_scenes(path: str, scenes: Sequence[Scene],
                extent: Sequence[float] = (128.0, 128.0)) -> Path:
    """Write scenes as JSON. The extent of the first scene wins when present."""
    if scenes:
        extent = scenes[0].extent
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(scenes_to_dict(scenes, extent), indent=2), encoding="utf-8")
    return path


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) and np.isfinite(value)


def _schema_error(path: Path, field_path: str, problem: str) -> SceneFileError:
    return SceneFileError(f"{path}: {field_path}: {problem}")


def load_scenes(path: str) -> List[Scene]:
    """Parse and validate a scene file."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Scene file not found: {path}")
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise SceneFileError(f"{path}: byte {e.start}: not valid UTF-8 ({e.reason})") from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        lines = text.splitlines()
        context = lines[e.lineno - 1] if 0 < e.lineno <= len(lines) else ""
        raise SceneFileError(
            f"{path}: line {e.lineno}, column {e.colno}: {e.msg}\n    {context}"
        ) from e

    if not isinstance(data, dict):
        raise _schema_error(path, "<root>", "expected an object")
    if data.get("version") != SCENE_FILE_VERSION:
        raise _schema_error(path, "version", f"expected {SCENE_FILE_VERSION}, got {data.get('version')!r}")
    extent = data.get("extent")
    if not isinstance(extent, list) or len(extent) != 2 or not all(_is_number(v) and v > 0 for v in extent):
        raise _schema_error(path, "extent", "expected [width, height] with positive values")
    width, height = float(extent[0]), float(extent[1])
    raw_scenes = data.get("scenes")
    if not isinstance(raw_scenes, list):
        raise _schema_error(path, "scenes", "expected a list")

    scenes = []
    for i, raw in enumerate(raw_scenes):
        objects_raw = raw.get("objects") if isinstance(raw, dict) else None
        if not isinstance(objects_raw, list):
            raise _schema_error(path, f"scenes[{i}].objects", "expected a list")
        objects = []
        for k, obj in enumerate(objects_raw):
            where = f"scenes[{i}].objects[{k}]"
            if not isinstance(obj, dict) or "box" not in obj or "category" not in obj:
                raise _schema_error(path, where, "expected {box, category}")
            box_raw, category = obj["box"], obj["category"]
            if not isinstance(box_raw, list) or len(box_raw) != 4 or not all(_is_number(v) for v in box_raw):
                raise _schema_error(path, f"{where}.box", "expected [x1, y1, x2, y2]")
            x1, y1, x2, y2 = (float(v) for v in box_raw)
            if not (0 <= x1 < x2 <= width and 0 <= y1 < y2 <= height):
                raise _schema_error(path, f"{where}.box", "must have positive area inside the extent")
            if not isinstance(category, int) or isinstance(category, bool) or category < 0:
                raise _schema_error(path, f"{where}.category", "expected a non-negative integer")
            objects.append(SceneObject(Box(x1, y1, x2, y2), category))
        scenes.append(Scene(extent=(width, height), objects=tuple(objects)))
    return scenes
