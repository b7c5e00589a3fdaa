"""Pseudo masks from aligned text/vision features.

The score map is the per-pixel product of normalized pixel features and
normalized class embeddings; thresholding a class channel and splitting
it into 4-connected components yields instance proposals, each with the
channel's class label, the mean in-component score, and a tight box.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backends
from .errors import ContractError, DimensionError, EmptyMaskError
from .geometry import BBox
from .numerics import Tensor
from .numerics.tensor import _l2_normalize_raw, _minmax_normalize_raw

NORM_MODES = ("l2", "minmax")


@dataclass(frozen=True)
class MaskProposal:
    mask: np.ndarray  # bool (H, W)
    class_id: int
    score: float
    bbox: BBox

    @property
    def area(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True)
class ProposalSet:
    proposals: tuple[MaskProposal, ...]
    scene_id: str = "scene"

    def __len__(self) -> int:
        return len(self.proposals)

    def __iter__(self):
        return iter(self.proposals)

    def class_ids(self) -> np.ndarray:
        return np.array([p.class_id for p in self.proposals], dtype=np.int64)

    def masks_flat(self, dtype=np.float64) -> np.ndarray:
        """(L, H*W) stack of the proposal masks."""
        if not self.proposals:
            return np.zeros((0, 0), dtype=dtype)
        return np.stack([p.mask.reshape(-1) for p in self.proposals]).astype(dtype)


def score_map(pixel_features: Tensor, text_embeddings: Tensor,
              mode: str = "l2") -> Tensor:
    """Per-pixel, per-class alignment scores, shape (H, W, C).

    l2 mode is the per-pixel cosine, so scores lie in [-1, 1]; minmax
    mode rescales each feature vector to [0, 1] and averages the
    elementwise products, so scores lie in [0, 1].
    """
    if mode not in NORM_MODES:
        raise ContractError(f"unknown norm mode {mode!r}")
    xi, xt = pixel_features.data, text_embeddings.data
    if xi.ndim != 3 or xt.ndim != 2:
        raise DimensionError(
            f"need (H,W,D) features and (D,C) embeddings, got {xi.shape} and {xt.shape}")
    if xi.shape[2] != xt.shape[0]:
        raise DimensionError(
            f"feature width {xi.shape[2]} != embedding width {xt.shape[0]}")
    if mode == "l2":
        ni = _l2_normalize_raw(xi, 2)
        nt = _l2_normalize_raw(xt, 0)
        scores = ni @ nt
        lo, hi = -1.0, 1.0
    else:
        ni = _minmax_normalize_raw(xi, 2)
        nt = _minmax_normalize_raw(xt, 0)
        # mean over the feature axis keeps minmax scores inside [0, 1]
        scores = (ni @ nt) / xi.shape[2]
        lo, hi = 0.0, 1.0
    assert scores.min() >= lo - 1e-9 and scores.max() <= hi + 1e-9, \
        f"score map escaped [{lo}, {hi}]"
    return Tensor(np.clip(scores, lo, hi), copy=False)


def tight_bbox(mask: np.ndarray) -> BBox:
    """Minimal inclusive box covering all foreground pixels."""
    mask = np.asarray(mask, dtype=bool)
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        raise EmptyMaskError("tight_bbox needs at least one foreground pixel")
    cols = np.flatnonzero(mask.any(axis=0))
    return BBox(int(rows[0]), int(cols[0]), int(rows[-1]), int(cols[-1]))


def binarize_and_split(scores: Tensor, tau: float, min_area: int,
                       scene_id: str = "scene", mode: str = "l2") -> ProposalSet:
    """Threshold each class channel and split it into instance proposals.

    Pixels scoring strictly above tau form the channel foreground;
    4-connected components with at least `min_area` pixels become one
    proposal each. Ordering is (class id, bbox corner), so downstream
    matching is reproducible.
    """
    lo, hi = (-1.0, 1.0) if mode == "l2" else (0.0, 1.0)
    if not lo < tau < hi:
        raise ContractError(f"tau must lie in ({lo}, {hi}) for mode {mode!r}, got {tau}")
    if min_area < 1:
        raise ContractError(f"min_area must be >= 1, got {min_area}")
    arr = scores.data
    if arr.ndim != 3:
        raise DimensionError(f"score map must be (H, W, C), got {arr.shape}")
    found = []
    for c in range(arr.shape[2]):
        channel = arr[:, :, c]
        labels, count = backends.label_components(channel > tau)
        for comp in range(1, count + 1):
            mask = labels == comp
            area = int(mask.sum())
            if area < min_area:
                continue
            found.append(MaskProposal(
                mask=mask,
                class_id=c,
                score=float(channel[mask].mean()),
                bbox=tight_bbox(mask),
            ))
    found.sort(key=lambda p: (p.class_id, p.bbox.row_min, p.bbox.col_min,
                              p.bbox.row_max, p.bbox.col_max))
    return ProposalSet(tuple(found), scene_id)
