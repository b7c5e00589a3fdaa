"""Language-vision prompts and prompt-to-kernel matching.

A prompt is the average-pooled backbone feature over a proposal's tight
box. Each kernel picks one prompt (cosine argmax by default; random and
sequential assignment exist as ablations) and receives it additively.
Prompts are constants for gradient purposes: only the base kernels
train.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import BoundsError, ContractError, DimensionError
from .numerics import Tensor, avg_pool_region
from .numerics.tensor import _l2_normalize_raw
from .proposals import ProposalSet

MATCH_STRATEGIES = ("cosine", "random", "sequential")


@dataclass(frozen=True)
class PromptSet:
    vectors: Tensor  # (L, D')
    source: tuple[int, ...]  # proposal index per row

    def __post_init__(self):
        if self.vectors.shape[0] != len(self.source):
            raise ContractError(
                f"{self.vectors.shape[0]} prompt rows but {len(self.source)} sources")

    def __len__(self) -> int:
        return self.vectors.shape[0]


@dataclass(frozen=True)
class MatchResult:
    similarity: Tensor  # (N, L)
    chosen: tuple[int, ...]  # prompt index per kernel


def extract_prompts(fpn_features: Tensor, props: ProposalSet) -> PromptSet:
    """One pooled feature vector per proposal box."""
    if fpn_features.ndim != 3:
        raise DimensionError(
            f"need a (D', H, W) feature map, got shape {fpn_features.shape}")
    d = fpn_features.shape[0]
    if len(props) == 0:
        return PromptSet(Tensor(np.zeros((0, d)), copy=False), ())
    rows = [avg_pool_region(fpn_features, p.bbox).data for p in props]
    return PromptSet(Tensor(np.stack(rows), copy=False), tuple(range(len(props))))


def similarity_matrix(kernels: Tensor, prompts: Tensor) -> Tensor:
    """Cosine similarity of every kernel row with every prompt row.

    Zero-norm rows contribute 0 by convention, so entries always lie in
    [-1, 1].
    """
    k, p = kernels.data, prompts.data
    if k.ndim != 2 or p.ndim != 2:
        raise DimensionError(f"need 2-D operands, got {k.shape} and {p.shape}")
    if k.shape[1] != p.shape[1]:
        raise DimensionError(f"width mismatch: kernels {k.shape} vs prompts {p.shape}")
    if p.shape[0] < 1:
        raise ContractError("similarity_matrix needs at least one prompt")
    sims = _l2_normalize_raw(k, 1) @ _l2_normalize_raw(p, 1).T
    return Tensor(np.clip(sims, -1.0, 1.0), copy=False)


def match(similarity: Tensor, strategy: str = "cosine",
          seed=None, num_kernels: Optional[int] = None) -> np.ndarray:
    """Pick a prompt index for every kernel.

    cosine: per-row argmax with lowest-index tie-break; sequential:
    kernel n takes prompt n mod L; random: a seeded uniform draw per
    kernel. An empty prompt set yields an empty result, signaling the
    caller to skip injection.
    """
    if strategy not in MATCH_STRATEGIES:
        raise ContractError(f"unknown match strategy {strategy!r}")
    e = similarity.data
    n = e.shape[0] if num_kernels is None else int(num_kernels)
    num_prompts = e.shape[1]
    if num_prompts == 0:
        return np.zeros(0, dtype=np.int64)
    if strategy == "cosine":
        return np.argmax(e, axis=1).astype(np.int64)
    if strategy == "sequential":
        return np.arange(n, dtype=np.int64) % num_prompts
    rng = np.random.default_rng(seed)
    return rng.integers(0, num_prompts, size=n, dtype=np.int64)


def match_prompts(kernels: Tensor, prompts: PromptSet, strategy: str = "cosine",
                  seed=None) -> Optional[MatchResult]:
    """Similarity plus chosen indices; None when there is nothing to match."""
    if len(prompts) == 0:
        return None
    sims = similarity_matrix(kernels, prompts.vectors)
    chosen = match(sims, strategy, seed=seed, num_kernels=kernels.shape[0])
    return MatchResult(sims, tuple(int(i) for i in chosen))


def inject(kernels: Tensor, prompts: PromptSet, chosen) -> Tensor:
    """Add each kernel's chosen prompt row; the inputs stay untouched."""
    chosen = np.asarray(chosen, dtype=np.int64)
    if chosen.size == 0:  # no proposals in the image: proceed with bare kernels
        return Tensor(kernels.data.copy(), copy=False)
    if chosen.shape != (kernels.shape[0],):
        raise ContractError(
            f"need one chosen prompt per kernel, got {chosen.shape} for {kernels.shape[0]}")
    if chosen.min() < 0 or chosen.max() >= len(prompts):
        raise BoundsError(
            f"chosen indices outside [0, {len(prompts)}): {chosen.tolist()}")
    if kernels.shape[1] != prompts.vectors.shape[1]:
        raise DimensionError(
            f"kernel width {kernels.shape[1]} != prompt width {prompts.vectors.shape[1]}")
    return Tensor(kernels.data + prompts.vectors.data[chosen], copy=False)


def inject_support(kernels: Tensor,
                   support_feats: Sequence[Sequence[Tensor]]) -> Tensor:
    """Few-shot injection: per episode class, the mean of its support
    features is added to every kernel row."""
    if len(support_feats) == 0:
        raise ContractError("need at least one episode class")
    total = np.zeros(kernels.shape[1])
    for class_feats in support_feats:
        if len(class_feats) == 0:
            raise ContractError("each episode class needs at least one support feature")
        stacked = np.stack([f.data for f in class_feats])
        if stacked.shape[1] != kernels.shape[1]:
            raise DimensionError(
                f"support width {stacked.shape[1]} != kernel width {kernels.shape[1]}")
        total = total + stacked.mean(axis=0)
    return Tensor(kernels.data + total, copy=False)
