"""
Command-line front-end for the assignment lab.

    python cli.py generate-scenes --out runs/demo
    python cli.py train --config experiment.yaml --seed 3 --out runs/demo
    python cli.py eval --out runs/demo
    python cli.py assign-debug --out runs/demo --scene-index 2
    python cli.py sweep --config sweep.yaml --set train.steps=500
"""

import argparse
import itertools
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from assignment import AssignmentOutput, PredictionSnapshot, musu_assign
from config import (
    ExperimentConfig,
    config_hash,
    env_defaults,
    from_dict,
    load_config,
    to_dict,
    with_overrides,
    write_resolved_config,
)
from detector import AnchorLayout, DetectorParams, build_anchor_layout, decode
from errors import InvalidInputError, MusuError
from evaluation import EvalReport, evaluate
from geometry import GroundTruth
from scenes import Scene, generate_scenes, load_scenes, save_scenes
from trainer import load_checkpoint, save_checkpoint, train_run

logger = logging.getLogger(__name__)

SCENES_NAME = "scenes.json"
CHECKPOINT_NAME = "checkpoint.json"
TRAIN_LOG_NAME = "train_log.csv"
EVAL_REPORT_NAME = "eval_report.json"
PR_CURVES_NAME = "pr_curves.csv"
ASSIGNMENT_NAME = "assignment.json"
SWEEP_RESULTS_NAME = "sweep_results.csv"

SWEEP_COLUMNS = [
    "cell", "alpha", "bag_threshold", "tau_ratio", "anchors_per_location", "hard_targets",
    "criteria", "fixed_tau", "ap50", "ap75", "ap_coco", "agreement", "pearson",
]


def _nullable(value: float) -> Optional[float]:
    return float(value) if np.isfinite(value) else None


def _write_json(path: Path, payload: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, allow_nan=False), encoding="utf-8")
    return path


def _scenes_for(config: ExperimentConfig, out: Path) -> List[Scene]:
    """Scene file from the config, else scenes.json in the output dir, else a fresh seeded set."""
    if config.scenes_file:
        return load_scenes(config.scenes_file)
    existing = out / SCENES_NAME
    if existing.exists():
        return load_scenes(str(existing))
    scenes = generate_scenes(config.scenes)
    save_scenes(str(existing), scenes, config.scenes.extent)
    return scenes


def cmd_generate_scenes(config: ExperimentConfig, args: argparse.Namespace) -> int:
    out = Path(config.output_dir)
    scenes = generate_scenes(config.scenes)
    path = save_scenes(str(out / SCENES_NAME), scenes, config.scenes.extent)
    write_resolved_config(config, str(out))
    print(f"Wrote {len(scenes)} scenes to {path}")
    return 0


def _train(config: ExperimentConfig, out: Path) -> Tuple[List[DetectorParams], AnchorLayout, List[Scene]]:
    scenes = _scenes_for(config, out)
    layout = build_anchor_layout(config.layout)
    params, log = train_run(scenes, config.train, layout, config.scenes.num_categories, dump_dir=str(out))
    save_checkpoint(str(out / CHECKPOINT_NAME), params, layout, config_hash(config))
    log.to_csv(out / TRAIN_LOG_NAME, index=False)
    write_resolved_config(config, str(out))
    return params, layout, scenes


def cmd_train(config: ExperimentConfig, args: argparse.Namespace) -> int:
    out = Path(config.output_dir)
    params, _, _ = _train(config, out)
    print(f"Trained {len(params)} parameter tables for {config.train.steps} steps; "
          f"checkpoint at {out / CHECKPOINT_NAME}")
    return 0


def _evaluate(config: ExperimentConfig, out: Path, params: List[DetectorParams],
              layout: AnchorLayout, scenes: List[Scene]) -> EvalReport:
    report, curves = evaluate(params, layout, scenes, config.train.assign, config.eval)
    _write_json(out / EVAL_REPORT_NAME, report.to_dict())
    if curves is not None:
        curves.to_csv(out / PR_CURVES_NAME, index=False)
    write_resolved_config(config, str(out))
    return report


def cmd_eval(config: ExperimentConfig, args: argparse.Namespace) -> int:
    out = Path(config.output_dir)
    checkpoint = args.checkpoint or str(out / CHECKPOINT_NAME)
    params, layout, stored_hash = load_checkpoint(checkpoint)
    if stored_hash and stored_hash != config_hash(config):
        logger.warning("Checkpoint %s was trained under a different config (hash %s...).",
                       checkpoint, stored_hash[:12])
    scenes = _scenes_for(config, out)
    report = _evaluate(config, out, params, layout, scenes)
    print(f"AP {report.ap_coco:.4f}  AP50 {report.ap50:.4f}  AP75 {report.ap75:.4f}  "
          f"-> {out / EVAL_REPORT_NAME}")
    return 0


def _read_snapshot_fixture(path: str) -> Tuple[PredictionSnapshot, GroundTruth, np.ndarray]:
    fixture = Path(path)
    if not fixture.exists():
        raise FileNotFoundError(f"Snapshot fixture not found: {fixture}")
    try:
        data = json.loads(fixture.read_text(encoding="utf-8"))
        snapshot = PredictionSnapshot(probabilities=data["probabilities"], boxes=data["boxes"])
        gt = GroundTruth(boxes=data["gt_boxes"], categories=data["gt_categories"])
        centers = np.asarray(data["centers"], dtype=np.float64).reshape(-1, 2)
    except json.JSONDecodeError as e:
        raise InvalidInputError(f"{fixture}: line {e.lineno}, column {e.colno}: {e.msg}") from e
    except UnicodeDecodeError as e:
        raise InvalidInputError(f"{fixture}: byte {e.start}: not valid UTF-8 ({e.reason})") from e
    except KeyError as e:
        raise InvalidInputError(f"{fixture}: missing field {e}") from e
    return snapshot, gt, centers


def assignment_payload(assignment: AssignmentOutput, scene_index: Optional[int]) -> Dict[str, Any]:
    return {
        "scene": scene_index,
        "num_anchors": assignment.num_anchors,
        "num_assigned": assignment.num_assigned,
        "bags": [
            {
                "object": bag.object_index,
                "category": bag.category,
                "members": [int(a) for a in bag.members],
                "threshold_t": float(bag.threshold_t),
                "fallback": bag.fallback,
                "tau_cls": _nullable(assignment.tau_cls[bag.object_index]),
                "tau_reg": _nullable(assignment.tau_reg[bag.object_index]),
            }
            for bag in assignment.bags
        ],
        "records": assignment.to_records(),
    }


def cmd_assign_debug(config: ExperimentConfig, args: argparse.Namespace) -> int:
    out = Path(config.output_dir)
    if args.snapshot:
        snapshot, gt, centers = _read_snapshot_fixture(args.snapshot)
        scene_index = None
    else:
        checkpoint = args.checkpoint or str(out / CHECKPOINT_NAME)
        params, layout, _ = load_checkpoint(checkpoint)
        scenes = _scenes_for(config, out)
        scene_index = config.debug.scene_index if args.scene_index is None else args.scene_index
        if not 0 <= scene_index < len(scenes) or scene_index >= len(params):
            raise InvalidInputError(
                f"Scene index {scene_index} is outside the {min(len(scenes), len(params))} trained scenes."
            )
        snapshot = decode(params[scene_index], layout)
        gt = scenes[scene_index].ground_truth()
        centers = layout.centers

    assignment = musu_assign(snapshot, gt, centers, config.train.assign)
    path = _write_json(out / ASSIGNMENT_NAME, assignment_payload(assignment, scene_index))
    write_resolved_config(config, str(out))
    print(f"{assignment.num_assigned} anchors assigned across {len(assignment.bags)} objects -> {path}")
    return 0


def sweep_cells(config: ExperimentConfig) -> List[Dict[str, Any]]:
    """Cartesian product of the sweep grid, keys in sorted order."""
    keys = sorted(config.sweep.grid)
    if not keys:
        return [{}]
    return [dict(zip(keys, values)) for values in itertools.product(*(config.sweep.grid[k] for k in keys))]


def run_sweep_cell(task: Tuple[int, Dict[str, Any]]) -> Dict[str, Any]:
    """Train and evaluate one sweep cell in its own directory; returns its CSV row."""
    index, data = task
    config = from_dict(data)
    out = Path(config.output_dir)
    logger.info("Sweep cell %d -> %s", index, out)
    params, layout, scenes = _train(config, out)
    report = _evaluate(config, out, params, layout, scenes)
    assign = config.train.assign
    return {
        "cell": index,
        "alpha": assign.alpha,
        "bag_threshold": assign.bag_threshold,
        "tau_ratio": assign.tau_ratio,
        "anchors_per_location": config.layout.anchors_per_location,
        "hard_targets": assign.hard_targets,
        "criteria": assign.criteria,
        "fixed_tau": assign.fixed_tau,
        "ap50": report.ap50,
        "ap75": report.ap75,
        "ap_coco": report.ap_coco,
        "agreement": report.agreement_rate,
        "pearson": report.pearson,
    }


def cmd_sweep(config: ExperimentConfig, args: argparse.Namespace) -> int:
    out = Path(config.output_dir)
    cells = sweep_cells(config)
    tasks = []
    for index, overrides in enumerate(cells):
        cell = with_overrides(config, {**overrides, "output_dir": str(out / f"cell_{index:03d}")})
        tasks.append((index, to_dict(cell)))
    write_resolved_config(config, str(out))

    if config.sweep.workers > 1:
        with ProcessPoolExecutor(max_workers=config.sweep.workers) as pool:
            rows = list(pool.map(run_sweep_cell, tasks))
    else:
        rows = [run_sweep_cell(task) for task in tasks]

    results = pd.DataFrame(rows, columns=SWEEP_COLUMNS)
    for key in sorted(config.sweep.grid):
        results[key] = [cells[index][key] for index in results["cell"]]
    path = out / SWEEP_RESULTS_NAME
    results.to_csv(path, index=False)
    print(f"Sweep finished: {len(rows)} cells -> {path}")
    return 0


COMMANDS = {
    "generate-scenes": cmd_generate_scenes,
    "train": cmd_train,
    "eval": cmd_eval,
    "assign-debug": cmd_assign_debug,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Experiment YAML file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="Dotted override, e.g. train.assign.alpha=0.5 (repeatable)")
    common.add_argument("--out", help="Output directory (default: MUSU_OUTPUT_DIR or ./runs)")
    common.add_argument("--seed", type=int, help="Seed for scenes, anchor layout and training order")

    parser = argparse.ArgumentParser(description="Mutual-supervision label assignment lab")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate-scenes", parents=[common], help="Write a seeded synthetic scene set")
    sub.add_parser("train", parents=[common], help="Train the direct-parameterized detector")
    p_eval = sub.add_parser("eval", parents=[common], help="Evaluate a checkpoint")
    p_eval.add_argument("--checkpoint", help="Checkpoint path (default: <out>/checkpoint.json)")
    p_debug = sub.add_parser("assign-debug", parents=[common], help="Dump one scene's assignment")
    p_debug.add_argument("--checkpoint", help="Checkpoint path (default: <out>/checkpoint.json)")
    p_debug.add_argument("--scene-index", type=int, help="Scene to inspect (default: debug.scene_index)")
    p_debug.add_argument("--snapshot", help="JSON fixture with centers, probabilities, boxes, gt_boxes, gt_categories")
    sub.add_parser("sweep", parents=[common], help="Run the configured ablation grid")
    return parser


def configure_logging(level: Optional[str] = None):
    level = level or env_defaults()["log_level"]
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, run one subcommand, and return the exit status."""
    args = build_parser().parse_args(argv)
    try:
        configure_logging()
        config = load_config(args.config, args.overrides, seed=args.seed, output_dir=args.out)
        return COMMANDS[args.command](config, args)
    except (MusuError, OSError) as e:
        logger.error("%s failed: %s", args.command, e)
        print(f"Error: {e}", file=sys.stderr)
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
