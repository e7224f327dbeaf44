"""
Experiment configuration: environment defaults, one YAML file, and dotted
command-line overrides, resolved into nested dataclasses.
"""

import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple, Union, get_args, get_origin, get_type_hints

import yaml
from dotenv import load_dotenv

from detector import LayoutConfig
from errors import ConfigError
from evaluation import EvalConfig
from scenes import SceneSetConfig
from trainer import TrainConfig

logger = logging.getLogger(__name__)

load_dotenv()

RESOLVED_CONFIG_NAME = "resolved_config.yaml"
GRID_PREFIX = "sweep.grid."


@dataclass
class DebugConfig:
    scene_index: int = 0

    def __post_init__(self):
        if self.scene_index < 0:
            raise ConfigError("must be >= 0", "debug.scene_index")


@dataclass
class SweepConfig:
    """Cartesian grid of dotted keys to value lists."""

    grid: Dict[str, List[Any]] = field(default_factory=dict)
    workers: int = 1

    def __post_init__(self):
        if self.workers < 1:
            raise ConfigError("must be >= 1", "sweep.workers")
        for key, values in self.grid.items():
            if not values:
                raise ConfigError("needs at least one value", f"sweep.grid.{key}")


@dataclass
class ExperimentConfig:
    scenes: SceneSetConfig = field(default_factory=SceneSetConfig)
    layout: LayoutConfig = field(default_factory=LayoutConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    debug: DebugConfig = field(default_factory=DebugConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    output_dir: str = "runs"
    scenes_file: Optional[str] = None


def env_defaults() -> Dict[str, Any]:
    """Machine-level defaults read from the environment (and .env)."""
    workers = os.getenv("MUSU_SWEEP_WORKERS", "1")
    try:
        workers = int(workers)
    except ValueError:
        raise ConfigError(f"MUSU_SWEEP_WORKERS must be an integer, got {workers!r}", "sweep.workers") from None
    return {
        "output_dir": os.getenv("MUSU_OUTPUT_DIR", "runs"),
        "sweep_workers": workers,
        "log_level": os.getenv("MUSU_LOG_LEVEL", "INFO").upper(),
    }


def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def _coerce(value: Any, hint: Any, path: str) -> Any:
    if dataclasses.is_dataclass(hint):
        return _build(hint, value, path)
    if hint is Any:
        return value

    origin = get_origin(hint)
    args = get_args(hint)
    if origin is Union:
        options = [a for a in args if a is not type(None)]
        if value is None:
            if len(options) < len(args):
                return None
            raise ConfigError("must not be null", path)
        return _coerce(value, options[0], path)
    if origin in (list, List):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"expected a list, got {value!r}", path)
        inner = args[0] if args else Any
        return [_coerce(v, inner, f"{path}[{i}]") for i, v in enumerate(value)]
    if origin in (dict, Dict):
        if not isinstance(value, dict):
            raise ConfigError(f"expected a mapping, got {value!r}", path)
        inner = args[1] if args else Any
        return {str(k): _coerce(v, inner, _join(path, str(k))) for k, v in value.items()}

    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"expected true/false, got {value!r}", path)
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", path)
        return value
    if hint is float:
        if isinstance(value, bool):
            raise ConfigError(f"expected a number, got {value!r}", path)
        if isinstance(value, (int, float)):
            return float(value)
        if isinstance(value, str):
            # Fractions such as "1/3" are accepted for ratios.
            try:
                return float(Fraction(value.strip()))
            except (ValueError, ZeroDivisionError):
                pass
        raise ConfigError(f"expected a number, got {value!r}", path)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", path)
        return value
    return value


def _build(cls: type, data: Any, path: str = "") -> Any:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"expected a mapping, got {data!r}", path or "<root>")
    hints = get_type_hints(cls)
    names = [f.name for f in dataclasses.fields(cls)]
    for key in data:
        if key not in names:
            raise ConfigError(f"unknown key (expected one of: {', '.join(names)})", _join(path, str(key)))
    kwargs = {name: _coerce(value, hints[name], _join(path, name)) for name, value in data.items()}
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e), path or "<root>") from e


def to_dict(config: ExperimentConfig) -> Dict[str, Any]:
    return dataclasses.asdict(config)


def from_dict(data: Dict[str, Any]) -> ExperimentConfig:
    return _build(ExperimentConfig, data)


def set_dotted(data: Dict[str, Any], key: str, value: Any) -> Dict[str, Any]:
    """Set ``a.b.c = value`` inside a nested dict, creating mappings on the way.

    Under ``sweep.grid.`` the rest of the key is itself a dotted grid key and
    stays whole.
    """
    if key.startswith(GRID_PREFIX) and len(key) > len(GRID_PREFIX):
        parts = GRID_PREFIX.rstrip(".").split(".") + [key[len(GRID_PREFIX):]]
    else:
        parts = key.split(".")
    if not all(parts):
        raise ConfigError("malformed dotted key", key)
    node = data
    for i, part in enumerate(parts[:-1]):
        child = node.get(part)
        if child is None:
            child = node[part] = {}
        if not isinstance(child, dict):
            raise ConfigError("is not a mapping", ".".join(parts[: i + 1]))
        node = child
    node[parts[-1]] = value
    return data


def parse_override(text: str) -> Tuple[str, Any]:
    """``key=value`` with the value read as a YAML scalar or list."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like key=value", "--set")
    key, raw = text.split("=", 1)
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse value {raw!r}: {e}", key.strip()) from e
    return key.strip(), value


def load_config(path: Optional[str] = None, overrides: Iterable[str] = (),
                seed: Optional[int] = None, output_dir: Optional[str] = None) -> ExperimentConfig:
    """Resolve environment defaults, the YAML file, --seed, --set and --out, in that order."""
    data: Dict[str, Any] = {}
    if path:
        config_path = Path(path)
        if not config_path.exists():
            raise FileNotFoundError(f"Config file not found: {config_path}")
        try:
            loaded = yaml.safe_load(config_path.read_text(encoding="utf-8"))
        except yaml.YAMLError as e:
            raise ConfigError(f"{config_path}: invalid YAML ({e})") from e
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigError(f"{config_path}: top level must be a mapping")
        data = loaded or {}

    env = env_defaults()
    data.setdefault("output_dir", env["output_dir"])
    if isinstance(data.get("sweep", {}), dict):
        data.setdefault("sweep", {}).setdefault("workers", env["sweep_workers"])

    if seed is not None:
        for key in ("scenes.seed", "layout.seed", "train.seed"):
            set_dotted(data, key, seed)
    for text in overrides:
        set_dotted(data, *parse_override(text))
    if output_dir is not None:
        data["output_dir"] = output_dir

    config = from_dict(data)
    logger.debug("Resolved config: %s", to_dict(config))
    return config


def with_overrides(config: ExperimentConfig, overrides: Dict[str, Any]) -> ExperimentConfig:
    """A validated copy of ``config`` with dotted keys replaced."""
    data = to_dict(config)
    for key, value in overrides.items():
        set_dotted(data, key, value)
    return from_dict(data)


def _canonical(value: Any) -> Any:
    # Numbers hash by value: 8 and 8.0 agree.
    if isinstance(value, dict):
        return {k: _canonical(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_canonical(v) for v in value]
    if isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    return value


def config_hash(config: ExperimentConfig) -> str:
    canonical = json.dumps(_canonical(to_dict(config)), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def write_resolved_config(config: ExperimentConfig, directory: str) -> Path:
    path = Path(directory) / RESOLVED_CONFIG_NAME
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(to_dict(config), sort_keys=False), encoding="utf-8")
    return path
