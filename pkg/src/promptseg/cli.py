"""Command-line entry point orchestrating the desk-scale pipeline.

Subcommands: synth, propose, match, pretrain, compare, eval-ap, atlas.
Every run reads a strict JSON config (unknown keys are rejected),
writes its artifacts plus a resolved-config echo and a fixture content
hash into --out, and exits 1 with a one-line diagnostic on error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__, backends
from .checkpoint import load_checkpoint, save_checkpoint
from .encoders import load_scene, load_text_bank
from .errors import ConfigError, PromptSegError
from .evaluation import (COCO_THRESHOLDS, activation_atlas,
                         detections_from_proposals, diversity_report,
                         mean_average_precision)
from .fixtures import SynthSpec, fixture_hash, make_reference_fixture, write_fixture
from .head import HEAD_VARIANT, init_kernel_bank
from .losses import LossWeights
from .pgm import write_pgm
from .prompts import MATCH_STRATEGIES, extract_prompts, match_prompts
from .proposals import binarize_and_split, score_map, tight_bbox
from .train import (STRATEGIES, TrainConfig, compare_convergence, pretrain,
                    write_compare_curves, write_compare_summary,
                    write_train_log)

_FLOAT = (int, float)

_TOP_SCHEMA = {
    "seed": int, "steps": int, "learning_rate": _FLOAT, "weight_decay": _FLOAT,
    "beta1": _FLOAT, "beta2": _FLOAT, "eps": _FLOAT,
    "num_stages": int, "num_kernels": int, "strategy": str,
    "loss_weights": dict, "norm_mode": str, "tau": _FLOAT, "min_area": int,
    "bank": str, "scenes": list, "checkpoint": str, "synth": dict,
}
_LOSS_SCHEMA = {"lambda_cls": _FLOAT, "lambda_dice": _FLOAT,
                "lambda_ce": _FLOAT, "lambda_aux": _FLOAT}
_SYNTH_SCHEMA = {
    "num_scenes": int, "height": int, "width": int, "num_classes": int,
    "feature_dim": int, "fpn_dim": int, "noise_sigma": _FLOAT,
    "min_boxes": int, "max_boxes": int, "min_size": int, "max_size": int,
}


def _check_keys(doc: dict, schema: dict, context: str = "") -> None:
    for key, value in doc.items():
        if key not in schema:
            raise ConfigError(f'unknown config key "{context}{key}"')
        expected = schema[key]
        if expected is int:
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError(f'config key "{context}{key}" must be an integer')
        elif expected is _FLOAT:
            if not isinstance(value, _FLOAT) or isinstance(value, bool):
                raise ConfigError(f'config key "{context}{key}" must be a number')
        elif not isinstance(value, expected):
            raise ConfigError(
                f'config key "{context}{key}" must be a {expected.__name__}')


def load_config(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config not found: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    _check_keys(doc, _TOP_SCHEMA)
    if "loss_weights" in doc:
        _check_keys(doc["loss_weights"], _LOSS_SCHEMA, "loss_weights.")
    if "synth" in doc:
        _check_keys(doc["synth"], _SYNTH_SCHEMA, "synth.")
    doc["_dir"] = str(p.parent)
    return doc


def train_config_from(doc: dict) -> TrainConfig:
    weights = LossWeights(**doc.get("loss_weights", {}))
    cfg = TrainConfig(
        steps=doc.get("steps", 300),
        learning_rate=doc.get("learning_rate", 1e-4),
        weight_decay=doc.get("weight_decay", 0.05),
        beta1=doc.get("beta1", 0.9),
        beta2=doc.get("beta2", 0.999),
        eps=doc.get("eps", 1e-8),
        seed=doc.get("seed", 0),
        num_stages=doc.get("num_stages", 3),
        num_kernels=doc.get("num_kernels", 8),
        strategy=doc.get("strategy", "cosine"),
        loss_weights=weights,
        norm_mode=doc.get("norm_mode", "l2"),
        tau=doc.get("tau", 0.5),
        min_area=doc.get("min_area", 16),
    )
    cfg.validate()
    return cfg


def _resolve_path(doc: dict, key: str) -> Path:
    if key not in doc:
        raise ConfigError(f'config key "{key}" is required for this subcommand')
    return (Path(doc["_dir"]) / doc[key]).resolve()


def _load_fixture(doc: dict):
    bank_path = _resolve_path(doc, "bank")
    if "scenes" not in doc or not doc["scenes"]:
        raise ConfigError('config key "scenes" must list at least one scene manifest')
    scene_paths = [(Path(doc["_dir"]) / s).resolve() for s in doc["scenes"]]
    bank = load_text_bank(bank_path)
    scenes = [load_scene(p) for p in scene_paths]
    return bank, scenes, fixture_hash(bank_path, scene_paths)


def _write_echo(out_dir: Path, doc: dict, cfg: TrainConfig | None,
                fix_hash: str | None, extra: dict | None = None) -> None:
    echo = {
        "config": {k: v for k, v in doc.items() if k != "_dir"},
        "resolved": asdict(cfg) if cfg is not None else None,
        "fixture_sha256": fix_hash,
        "head_variant": HEAD_VARIANT,
        "backend": backends.backend_name(),
        "package_version": __version__,
    }
    if extra:
        echo.update(extra)
    (out_dir / "resolved-config.json").write_text(
        json.dumps(echo, indent=2, sort_keys=True) + "\n")


def _float_repr(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(doc: dict, out: Path, args) -> None:
    spec_kwargs = dict(doc.get("synth", {}))
    spec_kwargs["seed"] = doc.get("seed", 0) if args.seed is None else args.seed
    spec = SynthSpec(**spec_kwargs)
    bank, scenes = make_reference_fixture(spec)
    paths = write_fixture(out, bank, scenes)
    fix = fixture_hash(paths["bank"], paths["scenes"])
    _write_echo(out, doc, None, fix, {"synth": asdict(spec)})
    print(f"wrote {len(scenes)} scenes to {out}")


def cmd_propose(doc: dict, out: Path, args) -> None:
    cfg = _apply_overrides(train_config_from(doc), args)
    bank, scenes, fix = _load_fixture(doc)
    rows = []
    for scene in scenes:
        scores = score_map(scene.pixel_features, bank.embeddings, cfg.norm_mode)
        props = binarize_and_split(scores, cfg.tau, cfg.min_area,
                                   scene_id=scene.scene_id, mode=cfg.norm_mode)
        for i, p in enumerate(props):
            name = f"{scene.scene_id}_prop{i:03d}.pgm"
            write_pgm(out / name, p.mask)
            rows.append([scene.scene_id, i, p.class_id, _float_repr(p.score),
                         p.bbox.row_min, p.bbox.col_min, p.bbox.row_max,
                         p.bbox.col_max, p.area])
    with open(out / "proposals.csv", "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["scene", "index", "class_id", "score", "row_min",
                         "col_min", "row_max", "col_max", "area"])
        writer.writerows(rows)
    _write_echo(out, doc, cfg, fix)
    print(f"wrote {len(rows)} proposals to {out / 'proposals.csv'}")


def cmd_match(doc: dict, out: Path, args) -> None:
    cfg = _apply_overrides(train_config_from(doc), args)
    strategy = cfg.strategy if cfg.strategy in MATCH_STRATEGIES else "cosine"
    bank, scenes, fix = _load_fixture(doc)
    kernels = init_kernel_bank(cfg.num_kernels, scenes[0].fpn_dim,
                               bank.feature_dim, bank.num_classes,
                               cfg.num_stages, cfg.seed).kernels
    rows = []
    for scene in scenes:
        scores = score_map(scene.pixel_features, bank.embeddings, cfg.norm_mode)
        props = binarize_and_split(scores, cfg.tau, cfg.min_area,
                                   scene_id=scene.scene_id, mode=cfg.norm_mode)
        prompts = extract_prompts(scene.fpn_features, props)
        result = match_prompts(kernels, prompts, strategy, seed=(cfg.seed, 0))
        if result is None:
            continue
        for n, chosen in enumerate(result.chosen):
            rows.append([scene.scene_id, n, chosen,
                         _float_repr(result.similarity.data[n, chosen]), strategy])
    with open(out / "match-report.csv", "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["scene", "kernel", "chosen_proposal", "similarity",
                         "strategy"])
        writer.writerows(rows)
    _write_echo(out, doc, cfg, fix)
    print(f"wrote {len(rows)} matches to {out / 'match-report.csv'}")


def _run_manifest(out: Path, cfg: TrainConfig, fix: str, extra: dict) -> None:
    doc = {
        "config": asdict(cfg),
        "fixture_sha256": fix,
        "head_variant": HEAD_VARIANT,
        "backend": backends.backend_name(),
        "package_version": __version__,
    }
    doc.update(extra)
    (out / "run-manifest.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n")


def cmd_pretrain(doc: dict, out: Path, args) -> None:
    cfg = _apply_overrides(train_config_from(doc), args)
    bank, scenes, fix = _load_fixture(doc)
    result = pretrain(scenes, bank, cfg)
    write_train_log(result.log, out / "train-log.csv")
    save_checkpoint(out / "checkpoint.ckpt", result.bank,
                    config_echo={**asdict(cfg), "fixture_sha256": fix})
    _run_manifest(out, cfg, fix, {"steps_logged": len(result.log)})
    _write_echo(out, doc, cfg, fix)
    print(f"final loss {result.log[-1].total:.6f} after {cfg.steps} steps")


def cmd_compare(doc: dict, out: Path, args) -> None:
    cfg = _apply_overrides(train_config_from(doc), args)
    strategies = [s.strip() for s in (args.strategies or "cosine,none").split(",") if s.strip()]
    for s in strategies:
        if s not in STRATEGIES:
            raise ConfigError(f"unknown strategy {s!r}; choose from {STRATEGIES}")
    bank, scenes, fix = _load_fixture(doc)
    report = compare_convergence(scenes, bank, cfg, strategies)
    write_compare_curves(report, out / "compare-curves.csv")
    write_compare_summary(report, out / "compare-summary.csv")
    _run_manifest(out, cfg, fix, {"strategies": strategies,
                                  "threshold": report.threshold})
    _write_echo(out, doc, cfg, fix)
    for s in strategies:
        hit = report.steps_to_threshold[s]
        print(f"{s}: final {report.final_loss[s]:.6f}, "
              f"steps-to-threshold {hit if hit is not None else 'never'}")


def cmd_eval_ap(doc: dict, out: Path, args) -> None:
    cfg = _apply_overrides(train_config_from(doc), args)
    bank, scenes, fix = _load_fixture(doc)
    per_scene = {}
    for scene in scenes:
        scores = score_map(scene.pixel_features, bank.embeddings, cfg.norm_mode)
        props = binarize_and_split(scores, cfg.tau, cfg.min_area,
                                   scene_id=scene.scene_id, mode=cfg.norm_mode)
        dets = detections_from_proposals(props, cfg.norm_mode)
        gts = [tight_bbox(mask) for mask, _ in scene.gt_masks]
        per_scene[scene.scene_id] = mean_average_precision(dets, gts)
    with open(out / "eval-report.csv", "w", newline="\n") as fh:
        fh.write(f"# class-agnostic boxes; score=proposal mean score "
                 f"(affine to [0,1] under l2); tau={cfg.tau}; "
                 f"norm={cfg.norm_mode}; head={HEAD_VARIANT}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["scene", "iou_thr", "ap"])
        for scene_id, (per_thr, map_val) in per_scene.items():
            for thr in COCO_THRESHOLDS:
                writer.writerow([scene_id, thr, _float_repr(per_thr[thr])])
            writer.writerow([scene_id, "mAP", _float_repr(map_val)])
        for thr in COCO_THRESHOLDS:
            mean_thr = float(np.mean([per_scene[s][0][thr] for s in per_scene]))
            writer.writerow(["ALL", thr, _float_repr(mean_thr)])
        overall = float(np.mean([per_scene[s][1] for s in per_scene]))
        writer.writerow(["ALL", "mAP", _float_repr(overall)])
    _write_echo(out, doc, cfg, fix)
    print(f"mAP {overall:.4f} over {len(scenes)} scenes")


def cmd_atlas(doc: dict, out: Path, args) -> None:
    cfg = _apply_overrides(train_config_from(doc), args)
    bank, scenes, fix = _load_fixture(doc)
    ckpt_path = _resolve_path(doc, "checkpoint")
    model, _ = load_checkpoint(ckpt_path)
    atlas = activation_atlas(model, scenes)
    for n in range(atlas.num_kernels):
        write_pgm(out / f"kernel{n:03d}.pgm", atlas.maps[n])
    report = diversity_report(atlas) if atlas.num_kernels >= 2 else None
    doc_out = {"image_count": atlas.image_count,
               "num_kernels": atlas.num_kernels,
               "diversity": report.as_dict() if report else None}
    (out / "diversity.json").write_text(
        json.dumps(doc_out, indent=2, sort_keys=True) + "\n")
    _write_echo(out, doc, cfg, fix)
    print(f"wrote {atlas.num_kernels} activation maps to {out}")


def _apply_overrides(cfg: TrainConfig, args) -> TrainConfig:
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "steps", None) is not None:
        cfg = replace(cfg, steps=args.steps)
    cfg.validate()
    return cfg


_COMMANDS = {
    "synth": cmd_synth,
    "propose": cmd_propose,
    "match": cmd_match,
    "pretrain": cmd_pretrain,
    "compare": cmd_compare,
    "eval-ap": cmd_eval_ap,
    "atlas": cmd_atlas,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="promptseg",
        description="prompt-injected pre-training pipeline for kernel-based "
                    "instance segmentation")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--steps", type=int, default=None,
                       help="override the config step count")
        if name == "compare":
            p.add_argument("--strategies", default=None,
                           help="comma-separated strategy list")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        doc = load_config(args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _COMMANDS[args.command](doc, out, args)
    except PromptSegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
