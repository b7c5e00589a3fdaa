"""Fixture and synthetic stand-ins for the aligned text/vision encoders.

Real text/image embedding models run offline; this module either loads
their exports from ".ten" files plus a JSON manifest, or synthesizes
scenes with planted class structure that the proposal stage provably
recovers. Every generator is a pure function of its arguments
(including the seed), and generated values are quantized to the
float32 grid so file round-trips are exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import CapacityError, ContractError, ManifestError
from .geometry import BBox
from .numerics import Tensor, quantize32, read_ten, write_ten
from .pgm import read_mask_pgm, write_pgm

# all scenes share one feature-to-backbone projection, like a shared backbone
_PROJECTION_SEED = 715517


@dataclass(frozen=True)
class TextBank:
    """Per-class text embeddings: one unit column per class name."""

    embeddings: Tensor  # (D, C)
    class_names: tuple[str, ...]

    def __post_init__(self):
        if self.embeddings.ndim != 2:
            raise ManifestError(f"text bank must be 2-D, got {self.embeddings.shape}")
        if self.embeddings.shape[1] != len(self.class_names):
            raise ManifestError(
                f"{len(self.class_names)} class names but "
                f"{self.embeddings.shape[1]} embedding columns")
        if len(self.class_names) < 1:
            raise ManifestError("a text bank needs at least one class")

    @property
    def feature_dim(self) -> int:
        return self.embeddings.shape[0]

    @property
    def num_classes(self) -> int:
        return self.embeddings.shape[1]


@dataclass(frozen=True)
class Scene:
    """One image worth of encoder outputs plus evaluation-only truth."""

    pixel_features: Tensor  # (H, W, D)
    fpn_features: Tensor    # (D', H, W)
    gt_masks: tuple[tuple[np.ndarray, int], ...]  # (bool HxW, class id), eval only
    seed: int
    scene_id: str = "scene"

    def __post_init__(self):
        h, w, _ = self.pixel_features.shape
        for mask, class_id in self.gt_masks:
            if mask.shape != (h, w):
                raise ManifestError(f"gt mask shape {mask.shape} != scene {h}x{w}")
            if class_id < 0:
                raise ManifestError(f"negative class id {class_id}")

    @property
    def height(self) -> int:
        return self.pixel_features.shape[0]

    @property
    def width(self) -> int:
        return self.pixel_features.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.pixel_features.shape[2]

    @property
    def fpn_dim(self) -> int:
        return self.fpn_features.shape[0]


def synth_text_bank(num_classes: int, dim: int, seed: int,
                    class_names: Sequence[str] | None = None) -> TextBank:
    """Mutually orthogonal unit columns via Gram-Schmidt over seeded draws."""
    if num_classes > dim:
        raise CapacityError(
            f"cannot fit {num_classes} orthogonal classes in {dim} dimensions")
    if num_classes < 1:
        raise ContractError("need at least one class")
    rng = np.random.default_rng(seed)
    cols = []
    while len(cols) < num_classes:
        v = rng.normal(size=dim)
        for u in cols:
            v = v - (v @ u) * u
        norm = np.linalg.norm(v)
        if norm < 1e-8:  # essentially impossible, but keep the generator total
            continue
        cols.append(v / norm)
    emb = quantize32(np.stack(cols, axis=1))
    names = tuple(class_names) if class_names is not None else tuple(
        f"class_{i}" for i in range(num_classes))
    return TextBank(Tensor(emb, copy=False), names)


def fpn_projection(dim: int, fpn_dim: int) -> np.ndarray:
    """The fixed seeded projection shared by every synthetic scene."""
    rng = np.random.default_rng((_PROJECTION_SEED, dim, fpn_dim))
    return quantize32(rng.normal(0.0, 1.0 / np.sqrt(dim), size=(dim, fpn_dim)))


def synth_scene(bank: TextBank, layout: Sequence[tuple[BBox, int]],
                noise_sigma: float, seed: int, *,
                height: int, width: int, fpn_dim: int | None = None,
                scene_id: str = "scene") -> Scene:
    """Plant class columns inside boxes; later layout entries win per pixel.

    In-box pixels carry the class embedding plus Gaussian noise,
    background pixels carry noise only. The backbone stand-in is a
    fixed linear projection of the pixel features.
    """
    if noise_sigma < 0:
        raise ContractError("noise_sigma must be >= 0")
    d = bank.feature_dim
    fpn_dim = d if fpn_dim is None else fpn_dim
    owner = np.full((height, width), -1, dtype=np.int64)
    base = np.zeros((height, width, d))
    for idx, (box, class_id) in enumerate(layout):
        box.check_within(height, width)
        if not 0 <= class_id < bank.num_classes:
            raise ContractError(f"class id {class_id} outside [0, {bank.num_classes})")
        sl = (slice(box.row_min, box.row_max + 1), slice(box.col_min, box.col_max + 1))
        base[sl] = bank.embeddings.data[:, class_id]
        owner[sl] = idx
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, noise_sigma, size=base.shape) if noise_sigma > 0 else 0.0
    feats = quantize32(base + noise)
    proj = fpn_projection(d, fpn_dim)
    fpn = quantize32(np.transpose(feats @ proj, (2, 0, 1)))
    gt = []
    for idx, (_, class_id) in enumerate(layout):
        mask = owner == idx
        if mask.any():  # fully occluded instances vanish from the truth
            gt.append((mask, class_id))
    return Scene(Tensor(feats, copy=False), Tensor(fpn, copy=False),
                 tuple(gt), seed, scene_id)


# ---------------------------------------------------------------------------
# file round trips
# ---------------------------------------------------------------------------

def save_text_bank(bank: TextBank, manifest_path) -> None:
    manifest_path = Path(manifest_path)
    ten_name = manifest_path.stem + ".ten"
    write_ten(manifest_path.parent / ten_name, bank.embeddings)
    doc = {
        "embeddings": ten_name,
        "feature_dim": bank.feature_dim,
        "num_classes": bank.num_classes,
        "class_names": list(bank.class_names),
    }
    manifest_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_text_bank(manifest_path) -> TextBank:
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise ManifestError(f"text bank manifest not found: {manifest_path}")
    doc = json.loads(manifest_path.read_text())
    emb = read_ten(manifest_path.parent / doc["embeddings"])
    if emb.shape != (doc["feature_dim"], doc["num_classes"]):
        raise ManifestError(
            f"manifest declares {(doc['feature_dim'], doc['num_classes'])}, "
            f"tensor is {emb.shape}")
    if len(doc["class_names"]) != doc["num_classes"]:
        raise ManifestError(
            f"manifest lists {len(doc['class_names'])} class names "
            f"for {doc['num_classes']} classes")
    return TextBank(emb, tuple(doc["class_names"]))


def save_scene(scene: Scene, manifest_path, class_names: Sequence[str]) -> None:
    manifest_path = Path(manifest_path)
    stem = manifest_path.stem
    folder = manifest_path.parent
    write_ten(folder / f"{stem}_pixel.ten", scene.pixel_features)
    write_ten(folder / f"{stem}_fpn.ten", scene.fpn_features)
    masks = []
    for i, (mask, class_id) in enumerate(scene.gt_masks):
        name = f"{stem}_gt{i:03d}.pgm"
        write_pgm(folder / name, mask)
        masks.append({"path": name, "class_id": int(class_id)})
    doc = {
        "pixel_features": f"{stem}_pixel.ten",
        "fpn_features": f"{stem}_fpn.ten",
        "height": scene.height,
        "width": scene.width,
        "feature_dim": scene.feature_dim,
        "fpn_dim": scene.fpn_dim,
        "num_classes": len(class_names),
        "class_names": list(class_names),
        "gt_masks": masks,
        "seed": int(scene.seed),
        "scene_id": scene.scene_id,
    }
    manifest_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_scene(manifest_path) -> Scene:
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise ManifestError(f"scene manifest not found: {manifest_path}")
    doc = json.loads(manifest_path.read_text())
    folder = manifest_path.parent
    pixel = read_ten(folder / doc["pixel_features"])
    fpn = read_ten(folder / doc["fpn_features"])
    expect_pixel = (doc["height"], doc["width"], doc["feature_dim"])
    if pixel.shape != expect_pixel:
        raise ManifestError(f"pixel features are {pixel.shape}, manifest says {expect_pixel}")
    expect_fpn = (doc["fpn_dim"], doc["height"], doc["width"])
    if fpn.shape != expect_fpn:
        raise ManifestError(f"backbone features are {fpn.shape}, manifest says {expect_fpn}")
    gt = []
    for entry in doc["gt_masks"]:
        mask = read_mask_pgm(folder / entry["path"])
        class_id = int(entry["class_id"])
        if not 0 <= class_id < doc["num_classes"]:
            raise ManifestError(f"gt class id {class_id} outside [0, {doc['num_classes']})")
        gt.append((mask, class_id))
    return Scene(pixel, fpn, tuple(gt), int(doc["seed"]),
                 doc.get("scene_id", manifest_path.stem))
