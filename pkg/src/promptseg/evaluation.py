"""Class-agnostic detection AP and kernel activation analysis."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import backends
from .encoders import Scene
from .errors import ContractError
from .geometry import BBox
from .head import KernelBank, forward
from .numerics.tensor import _sigmoid_raw
from .proposals import ProposalSet

COCO_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
ATLAS_SIZE = (200, 200)


@dataclass(frozen=True)
class Detection:
    bbox: BBox
    score: float
    source_id: int = -1

    def __post_init__(self):
        if not np.isfinite(self.score):
            raise ContractError("detection score must be finite")


def box_iou(a: BBox, b: BBox) -> float:
    """Intersection over union with inclusive-pixel areas."""
    inter_h = min(a.row_max, b.row_max) - max(a.row_min, b.row_min) + 1
    inter_w = min(a.col_max, b.col_max) - max(a.col_min, b.col_min) + 1
    if inter_h <= 0 or inter_w <= 0:
        return 0.0
    inter = inter_h * inter_w
    return inter / (a.area + b.area - inter)


def detections_from_proposals(props: ProposalSet, mode: str = "l2") -> list[Detection]:
    """Proposal boxes as class-agnostic detections. The mean-score
    confidence is mapped affinely onto [0, 1]; AP is invariant under
    that rescaling."""
    dets = []
    for i, p in enumerate(props):
        score = (p.score + 1.0) / 2.0 if mode == "l2" else p.score
        dets.append(Detection(p.bbox, float(score), i))
    return dets


def _match_greedy(dets: Sequence[Detection], gts: Sequence[BBox],
                  iou_thr: float) -> np.ndarray:
    """True/false positive flags in score-descending order (stable on ties)."""
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    taken = np.zeros(len(gts), dtype=bool)
    tp = np.zeros(len(dets), dtype=bool)
    for rank, i in enumerate(order):
        best_iou, best_j = 0.0, -1
        for j, g in enumerate(gts):
            if taken[j]:
                continue
            iou = box_iou(dets[i].bbox, g)
            if iou >= iou_thr and iou > best_iou:
                best_iou, best_j = iou, j
        if best_j >= 0:
            taken[best_j] = True
            tp[rank] = True
    return tp


def average_precision(dets: Sequence[Detection], gts: Sequence[BBox],
                      iou_thr: float, interpolation: str = "exact") -> float:
    """Area under the precision-recall curve at one IoU threshold.

    "exact" integrates the all-point interpolated curve; "coco101"
    samples 101 recall points for parity with the common protocol.
    Conventions: no truth and no detections scores 1.0; detections
    against no truth score 0.0.
    """
    if interpolation not in ("exact", "coco101"):
        raise ContractError(f"unknown interpolation {interpolation!r}")
    if len(gts) == 0:
        return 1.0 if len(dets) == 0 else 0.0
    if len(dets) == 0:
        return 0.0
    tp = _match_greedy(dets, gts, iou_thr)
    tp_cum = np.cumsum(tp)
    fp_cum = np.cumsum(~tp)
    recall = tp_cum / len(gts)
    precision = tp_cum / (tp_cum + fp_cum)
    # precision envelope: best precision at recall >= r
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    if interpolation == "coco101":
        samples = np.linspace(0.0, 1.0, 101)
        idx = np.searchsorted(recall, samples, side="left")
        vals = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
        return float(vals.mean())
    ap = 0.0
    prev_r = 0.0
    for k in range(len(recall)):
        if recall[k] > prev_r:  # integrate where recall actually advances
            ap += (recall[k] - prev_r) * envelope[k]
            prev_r = recall[k]
    return float(ap)


def mean_average_precision(dets: Sequence[Detection], gts: Sequence[BBox],
                           thresholds: Sequence[float] = COCO_THRESHOLDS,
                           interpolation: str = "exact") -> tuple[dict[float, float], float]:
    per_thr = {float(t): average_precision(dets, gts, float(t), interpolation)
               for t in thresholds}
    return per_thr, float(np.mean(list(per_thr.values())))


# ---------------------------------------------------------------------------
# kernel activation analysis
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ActivationAtlas:
    maps: np.ndarray  # (N, 200, 200) in [0, 1]
    image_count: int

    @property
    def num_kernels(self) -> int:
        return self.maps.shape[0]


def activation_atlas(bank: KernelBank, scenes: Sequence[Scene],
                     size: tuple[int, int] = ATLAS_SIZE) -> ActivationAtlas:
    """Final-stage sigmoid activation of every kernel, resized and
    averaged across scenes. Evaluation runs without injection."""
    if len(scenes) < 1:
        raise ContractError("need at least one scene")
    accum: Optional[np.ndarray] = None
    for scene in scenes:
        final = forward(bank, scene.fpn_features)[-1]
        probs = _sigmoid_raw(final.mask_logits.data)
        resized = np.stack([
            backends.resize_bilinear(probs[n], size[0], size[1])
            for n in range(probs.shape[0])])
        accum = resized if accum is None else accum + resized
    return ActivationAtlas(accum / len(scenes), len(scenes))


@dataclass(frozen=True)
class DiversityReport:
    mean_pairwise_iou: float
    centroids: np.ndarray  # (N, 2) row/col of each top region
    centroid_scatter: float

    def as_dict(self) -> dict:
        return {
            "mean_pairwise_iou": self.mean_pairwise_iou,
            "centroid_scatter": self.centroid_scatter,
            "centroids": self.centroids.tolist(),
        }


def diversity_report(atlas: ActivationAtlas) -> DiversityReport:
    """Binarize each map at its own 90th percentile and report how much
    the top regions overlap (lower mean IoU = more diverse priors)."""
    n = atlas.num_kernels
    if n < 2:
        raise ContractError("diversity needs at least two kernels")
    tops = []
    centroids = np.zeros((n, 2))
    for i in range(n):
        m = atlas.maps[i]
        top = m > np.percentile(m, 90.0)
        if not top.any():  # constant map: the whole map is the top region
            top = np.ones_like(top, dtype=bool)
        tops.append(top)
        rows, cols = np.nonzero(top)
        centroids[i] = (rows.mean(), cols.mean())
    ious = []
    for i in range(n):
        for j in range(i + 1, n):
            inter = np.logical_and(tops[i], tops[j]).sum()
            union = np.logical_or(tops[i], tops[j]).sum()
            ious.append(1.0 if union == 0 else inter / union)
    center = centroids.mean(axis=0)
    scatter = float(np.sqrt(((centroids - center) ** 2).sum(axis=1).mean()))
    return DiversityReport(float(np.mean(ious)), centroids, scatter)
