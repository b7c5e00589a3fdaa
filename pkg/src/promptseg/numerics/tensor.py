"""Dense tensors and the eager operation set.

Values are held as float64 for in-memory math; every file interface
(see `fileio`) stores 32-bit IEEE-754. Tensors are immutable after
construction and all operations are pure, so independent pipelines can
share them freely.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .. import backends
from ..errors import BoundsError, ContractError, DimensionError
from ..geometry import BBox


class Tensor:
    """Immutable dense n-dimensional array of finite floats."""

    __slots__ = ("_data",)

    def __init__(self, values, *, copy: bool = True):
        if copy:
            arr = np.array(values, dtype=np.float64, order="C")
        else:  # still copies when the input is not contiguous float64
            arr = np.ascontiguousarray(values, dtype=np.float64)
        if arr.size and not np.isfinite(arr).all():
            raise ContractError("tensor values must be finite")
        arr.setflags(write=False)
        self._data = arr

    @property
    def data(self) -> np.ndarray:
        """Read-only numpy view of the values."""
        return self._data

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(int(d) for d in self._data.shape)

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return int(self._data.size)

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() needs a single value, got shape {self.shape}")
        return float(self._data.reshape(()))

    def reshape(self, *shape: int) -> "Tensor":
        return Tensor(self._data.reshape(shape), copy=False)

    def tolist(self):
        return self._data.tolist()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


def tensor(values) -> Tensor:
    return values if isinstance(values, Tensor) else Tensor(values)


def zeros(shape: Sequence[int] | int) -> Tensor:
    return Tensor(np.zeros(shape), copy=False)


def full(shape: Sequence[int] | int, value: float) -> Tensor:
    return Tensor(np.full(shape, float(value)), copy=False)


# ---------------------------------------------------------------------------
# raw-array forward kernels, shared by the eager API and the gradient tape
# ---------------------------------------------------------------------------

def _matmul_raw(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul needs 2-D operands, got {a.shape} x {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dims disagree: {a.shape} x {b.shape}")
    return a @ b


def _sigmoid_raw(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softmax_raw(x: np.ndarray, axis: int) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=axis, keepdims=True)


def _softplus_raw(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def _check_axis(x: np.ndarray, axis: int) -> int:
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"axis {axis} invalid for shape {x.shape}")
    return axis % x.ndim


def _l2_normalize_raw(x: np.ndarray, axis: int) -> np.ndarray:
    norms = np.sqrt((x * x).sum(axis=axis, keepdims=True))
    safe = np.where(norms == 0.0, 1.0, norms)
    return x / safe


def _minmax_normalize_raw(x: np.ndarray, axis: int) -> np.ndarray:
    lo = x.min(axis=axis, keepdims=True)
    hi = x.max(axis=axis, keepdims=True)
    span = hi - lo
    flat = span == 0.0
    safe = np.where(flat, 1.0, span)
    out = (x - lo) / safe
    return np.where(np.broadcast_to(flat, x.shape), 0.5, out)


def _check_region(shape_hw: tuple[int, int], box: BBox) -> None:
    h, w = shape_hw
    box.check_within(h, w)


def _avg_pool_raw(feat: np.ndarray, box: BBox) -> np.ndarray:
    if feat.ndim != 3:
        raise DimensionError(f"avg_pool_region needs a (channels, H, W) map, got {feat.shape}")
    _check_region(feat.shape[1:], box)
    region = feat[:, box.row_min:box.row_max + 1, box.col_min:box.col_max + 1]
    return region.mean(axis=(1, 2))


# ---------------------------------------------------------------------------
# eager public operations
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Standard matrix product; empty inner dimension contracts to zeros."""
    return Tensor(_matmul_raw(a.data, b.data), copy=False)


def normalize(t: Tensor, axis: int, mode: str = "l2") -> Tensor:
    """Normalize each 1-D slice along `axis`.

    l2: unit Euclidean norm; all-zero slices stay zero.
    minmax: affine map onto [0, 1]; constant slices map to 0.5.
    """
    ax = _check_axis(t.data, axis)
    if mode == "l2":
        return Tensor(_l2_normalize_raw(t.data, ax), copy=False)
    if mode == "minmax":
        return Tensor(_minmax_normalize_raw(t.data, ax), copy=False)
    raise ContractError(f"unknown normalize mode {mode!r}")


def sigmoid(t: Tensor) -> Tensor:
    return Tensor(_sigmoid_raw(t.data), copy=False)


def softmax(t: Tensor, axis: int) -> Tensor:
    ax = _check_axis(t.data, axis)
    return Tensor(_softmax_raw(t.data, ax), copy=False)


def avg_pool_region(feature_map: Tensor, box: BBox) -> Tensor:
    """Per-channel mean of a (channels, H, W) map over an inclusive box."""
    return Tensor(_avg_pool_raw(feature_map.data, box), copy=False)


def resize_bilinear(mask: Tensor, out_hw: tuple[int, int] = (200, 200)) -> Tensor:
    """Corner-aligned bilinear resample of a 2-D map."""
    if mask.ndim != 2:
        raise DimensionError(f"resize_bilinear needs a 2-D map, got shape {mask.shape}")
    if mask.shape[0] < 1 or mask.shape[1] < 1:
        raise BoundsError("resize_bilinear needs at least one source pixel")
    out_h, out_w = int(out_hw[0]), int(out_hw[1])
    return Tensor(backends.resize_bilinear(mask.data, out_h, out_w), copy=False)
