"""Pure-numpy implementations of the hot kernels.

Reference semantics for the numba backend: both backends must agree
exactly on integer outputs (component labels) and to floating-point
round-off on the rest.
"""

from __future__ import annotations

import numpy as np

NAME = "numpy"


def label_components(foreground: np.ndarray) -> tuple[np.ndarray, int]:
    """4-connected components of a binary map.

    Returns (labels, count) where labels is int32, background 0, and
    components are numbered 1..count in row-major first-pixel order.
    Implemented as iterative minimum-label propagation; passes scale
    with the component diameter.
    """
    fg = np.ascontiguousarray(foreground, dtype=bool)
    h, w = fg.shape
    sentinel = np.int64(h * w + 1)
    seed = np.arange(1, h * w + 1, dtype=np.int64).reshape(h, w)
    lab = np.where(fg, seed, sentinel)
    while True:
        nxt = lab.copy()
        nxt[1:, :] = np.minimum(nxt[1:, :], lab[:-1, :])
        nxt[:-1, :] = np.minimum(nxt[:-1, :], lab[1:, :])
        nxt[:, 1:] = np.minimum(nxt[:, 1:], lab[:, :-1])
        nxt[:, :-1] = np.minimum(nxt[:, :-1], lab[:, 1:])
        nxt[~fg] = sentinel
        if np.array_equal(nxt, lab):
            break
        lab = nxt
    out = np.zeros((h, w), dtype=np.int32)
    roots = lab[fg]
    uniq = np.unique(roots)
    if uniq.size:
        # the minimum seed of a component is its earliest row-major pixel,
        # so ascending root order is first-occurrence order
        out[fg] = (np.searchsorted(uniq, roots) + 1).astype(np.int32)
    return out, int(uniq.size)


def resize_bilinear(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resample of a 2-D map."""
    src = np.ascontiguousarray(src, dtype=np.float64)
    h, w = src.shape
    sr = (h - 1) / max(out_h - 1, 1)
    sc = (w - 1) / max(out_w - 1, 1)
    r = np.arange(out_h, dtype=np.float64) * sr
    c = np.arange(out_w, dtype=np.float64) * sc
    r0 = r.astype(np.int64)
    c0 = c.astype(np.int64)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (r - r0)[:, None]
    fc = (c - c0)[None, :]
    v00 = src[np.ix_(r0, c0)]
    v01 = src[np.ix_(r0, c1)]
    v10 = src[np.ix_(r1, c0)]
    v11 = src[np.ix_(r1, c1)]
    top = v00 + fc * (v01 - v00)
    bot = v10 + fc * (v11 - v10)
    return top + fr * (bot - top)


def mask_pair_costs(mask_logits: np.ndarray, gt: np.ndarray,
                    dice_eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-pair soft-overlap and cross-entropy costs between N predicted
    masks (logits, flat pixels) and L binary targets.

    Returns (dice_cost, ce_cost), each (N, L) float64.
    """
    logits = np.ascontiguousarray(mask_logits, dtype=np.float64)
    gt = np.ascontiguousarray(gt, dtype=np.float64)
    n_px = logits.shape[1]
    probs = 1.0 / (1.0 + np.exp(-np.clip(logits, -60.0, 60.0)))
    inter = probs @ gt.T
    p_sum = probs.sum(axis=1)
    g_sum = gt.sum(axis=1)
    dice = 1.0 - (2.0 * inter + dice_eps) / (p_sum[:, None] + g_sum[None, :] + dice_eps)
    softplus_sum = np.logaddexp(0.0, logits).sum(axis=1)
    ce = (softplus_sum[:, None] - logits @ gt.T) / n_px
    return dice, ce
