"""Deterministic synthetic fixtures for tests and the `synth` subcommand."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .encoders import Scene, TextBank, save_scene, save_text_bank, synth_scene, synth_text_bank
from .errors import ContractError
from .geometry import BBox


@dataclass(frozen=True)
class SynthSpec:
    num_scenes: int = 4
    height: int = 32
    width: int = 32
    num_classes: int = 4
    feature_dim: int = 16
    fpn_dim: int = 16
    noise_sigma: float = 0.05
    min_boxes: int = 2
    max_boxes: int = 3
    min_size: int = 6
    max_size: int = 12
    seed: int = 0


def random_layout(rng: np.random.Generator, height: int, width: int,
                  num_classes: int, num_boxes: int, min_size: int = 4,
                  max_size: int = 10, margin: int = 1,
                  max_tries: int = 2000) -> list[tuple[BBox, int]]:
    """Non-touching, non-overlapping boxes by rejection sampling. The
    margin keeps a background gap so connected components never merge."""
    if max_size > min(height, width):
        raise ContractError("max_size exceeds the scene")
    layout: list[tuple[BBox, int]] = []
    tries = 0
    while len(layout) < num_boxes:
        tries += 1
        if tries > max_tries:
            raise ContractError(
                f"could not place {num_boxes} boxes in {height}x{width}")
        bh = int(rng.integers(min_size, max_size + 1))
        bw = int(rng.integers(min_size, max_size + 1))
        r0 = int(rng.integers(0, height - bh + 1))
        c0 = int(rng.integers(0, width - bw + 1))
        box = BBox(r0, c0, r0 + bh - 1, c0 + bw - 1)
        clash = any(
            not (box.row_max + margin < other.row_min or
                 other.row_max + margin < box.row_min or
                 box.col_max + margin < other.col_min or
                 other.col_max + margin < box.col_min)
            for other, _ in layout)
        if clash:
            continue
        layout.append((box, int(rng.integers(0, num_classes))))
    return layout


def make_reference_fixture(spec: SynthSpec = SynthSpec()) -> tuple[TextBank, list[Scene]]:
    """The canonical desk-scale fixture: one bank plus `num_scenes`
    scenes with seeded random layouts."""
    bank = synth_text_bank(spec.num_classes, spec.feature_dim, spec.seed)
    scenes = []
    for i in range(spec.num_scenes):
        rng = np.random.default_rng((spec.seed, i))
        n_boxes = int(rng.integers(spec.min_boxes, spec.max_boxes + 1))
        layout = random_layout(rng, spec.height, spec.width, spec.num_classes,
                               n_boxes, spec.min_size, spec.max_size)
        scenes.append(synth_scene(bank, layout, spec.noise_sigma,
                                  seed=spec.seed * 1000 + i,
                                  height=spec.height, width=spec.width,
                                  fpn_dim=spec.fpn_dim, scene_id=f"scene{i}"))
    return bank, scenes


def write_fixture(out_dir, bank: TextBank, scenes: Sequence[Scene]) -> dict:
    """Write bank.json/scene manifests and return the manifest paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bank_path = out / "bank.json"
    save_text_bank(bank, bank_path)
    scene_paths = []
    for i, scene in enumerate(scenes):
        p = out / f"scene{i:03d}.json"
        save_scene(scene, p, bank.class_names)
        scene_paths.append(str(p))
    return {"bank": str(bank_path), "scenes": scene_paths}


def content_hash(paths: Sequence) -> str:
    """Order-independent sha256 over file names and bytes, so equal
    fixture sets hash equally regardless of listing order."""
    digest = hashlib.sha256()
    for p in sorted(Path(p) for p in paths):
        digest.update(p.name.encode("utf-8"))
        digest.update(p.read_bytes())
    return digest.hexdigest()


def fixture_hash(bank_manifest, scene_manifests: Sequence) -> str:
    """Hash a fixture set including the tensor/mask files the manifests
    reference."""
    files = [Path(bank_manifest)]
    doc = json.loads(Path(bank_manifest).read_text())
    files.append(Path(bank_manifest).parent / doc["embeddings"])
    for sm in scene_manifests:
        sm = Path(sm)
        files.append(sm)
        sdoc = json.loads(sm.read_text())
        files.append(sm.parent / sdoc["pixel_features"])
        files.append(sm.parent / sdoc["fpn_features"])
        for entry in sdoc["gt_masks"]:
            files.append(sm.parent / entry["path"])
    return content_hash(files)
