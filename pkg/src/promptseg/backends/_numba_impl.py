"""Numba-jitted implementations of the hot kernels.

Same contracts as `_numpy_impl`; loops are written so that elementwise
arithmetic matches the numpy backend bit-for-bit where no reduction
reordering is involved (resizing, labeling).
"""

from __future__ import annotations

import numpy as np
from numba import njit

NAME = "numba"


@njit(cache=True)
def _find(parent, x):
    while parent[x] != x:
        parent[x] = parent[parent[x]]
        x = parent[x]
    return x


@njit(cache=True)
def _label_cc(fg):
    h, w = fg.shape
    labels = np.zeros((h, w), dtype=np.int32)
    parent = np.zeros(h * w // 2 + 2, dtype=np.int32)
    nxt = 1
    for r in range(h):
        for c in range(w):
            if not fg[r, c]:
                continue
            up = labels[r - 1, c] if r > 0 else 0
            left = labels[r, c - 1] if c > 0 else 0
            if up == 0 and left == 0:
                parent[nxt] = nxt
                labels[r, c] = nxt
                nxt += 1
            elif up != 0 and left != 0:
                ru = _find(parent, up)
                rl = _find(parent, left)
                if ru < rl:
                    parent[rl] = ru
                    labels[r, c] = ru
                else:
                    parent[ru] = rl
                    labels[r, c] = rl
            elif up != 0:
                labels[r, c] = _find(parent, up)
            else:
                labels[r, c] = _find(parent, left)
    # renumber roots in row-major first-occurrence order
    remap = np.zeros(nxt, dtype=np.int32)
    count = 0
    for r in range(h):
        for c in range(w):
            if labels[r, c] != 0:
                root = _find(parent, labels[r, c])
                if remap[root] == 0:
                    count += 1
                    remap[root] = count
                labels[r, c] = remap[root]
    return labels, count


def label_components(foreground: np.ndarray) -> tuple[np.ndarray, int]:
    fg = np.ascontiguousarray(foreground, dtype=np.bool_)
    labels, count = _label_cc(fg)
    return labels, int(count)


@njit(cache=True)
def _resize(src, out_h, out_w):
    h, w = src.shape
    sr = (h - 1) / max(out_h - 1, 1)
    sc = (w - 1) / max(out_w - 1, 1)
    out = np.empty((out_h, out_w), dtype=np.float64)
    for i in range(out_h):
        r = i * sr
        r0 = int(r)
        r1 = min(r0 + 1, h - 1)
        fr = r - r0
        for j in range(out_w):
            c = j * sc
            c0 = int(c)
            c1 = min(c0 + 1, w - 1)
            fc = c - c0
            top = src[r0, c0] + fc * (src[r0, c1] - src[r0, c0])
            bot = src[r1, c0] + fc * (src[r1, c1] - src[r1, c0])
            out[i, j] = top + fr * (bot - top)
    return out


def resize_bilinear(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    return _resize(np.ascontiguousarray(src, dtype=np.float64), out_h, out_w)


@njit(cache=True)
def _pair_costs(logits, gt, dice_eps):
    n, n_px = logits.shape
    m = gt.shape[0]
    probs = np.empty((n, n_px), dtype=np.float64)
    softplus_sum = np.zeros(n, dtype=np.float64)
    p_sum = np.zeros(n, dtype=np.float64)
    for i in range(n):
        for p in range(n_px):
            x = logits[i, p]
            if x > 60.0:
                x = 60.0
            elif x < -60.0:
                x = -60.0
            s = 1.0 / (1.0 + np.exp(-x))
            probs[i, p] = s
            p_sum[i] += s
            softplus_sum[i] += np.logaddexp(0.0, logits[i, p])
    g_sum = np.zeros(m, dtype=np.float64)
    for j in range(m):
        for p in range(n_px):
            g_sum[j] += gt[j, p]
    dice = np.empty((n, m), dtype=np.float64)
    ce = np.empty((n, m), dtype=np.float64)
    for i in range(n):
        for j in range(m):
            inter = 0.0
            dot = 0.0
            for p in range(n_px):
                inter += probs[i, p] * gt[j, p]
                dot += logits[i, p] * gt[j, p]
            dice[i, j] = 1.0 - (2.0 * inter + dice_eps) / (p_sum[i] + g_sum[j] + dice_eps)
            ce[i, j] = (softplus_sum[i] - dot) / n_px
    return dice, ce


def mask_pair_costs(mask_logits: np.ndarray, gt: np.ndarray,
                    dice_eps: float) -> tuple[np.ndarray, np.ndarray]:
    logits = np.ascontiguousarray(mask_logits, dtype=np.float64)
    targets = np.ascontiguousarray(gt, dtype=np.float64)
    return _pair_costs(logits, targets, float(dice_eps))
