"""Reverse-mode differentiation over a closed operation set.

A `GradTape` records every operation as a node holding its kind, input
node ids, and computed value. Replaying the tape re-executes the same
numpy calls in the same order, so replay is bit-identical. `grad`
walks the nodes in reverse, accumulating exact gradients into every
marked parameter.

Supported differentiable kinds: matmul, add, mul, sigmoid, softmax,
l2_normalize, avg_pool, sum, mean, log, power, plus softplus and clip
(numerical-stability helpers with exact gradients). Anything recorded
without a registered gradient raises `UnsupportedOpError` from `grad`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from ..errors import ContractError, DimensionError, UnsupportedOpError
from ..geometry import BBox
from .tensor import (Tensor, _avg_pool_raw, _check_axis, _l2_normalize_raw,
                     _matmul_raw, _sigmoid_raw, _softmax_raw, _softplus_raw)

ArrayLike = Union["Var", Tensor, np.ndarray, float, int]


class _Node:
    __slots__ = ("kind", "inputs", "meta", "value", "needs_grad", "name")

    def __init__(self, kind, inputs, meta, value, needs_grad, name=None):
        self.kind = kind
        self.inputs = inputs
        self.meta = meta
        self.value = value
        self.needs_grad = needs_grad
        self.name = name


@dataclass(frozen=True)
class Var:
    """Handle to one node on a tape."""

    tape: "GradTape"
    index: int

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(int(d) for d in self.array.shape)

    @property
    def size(self) -> int:
        return int(self.array.size)

    @property
    def array(self) -> np.ndarray:
        return self.tape._nodes[self.index].value

    @property
    def value(self) -> Tensor:
        return Tensor(self.array)

    def __add__(self, other):
        return self.tape.add(self, other)

    def __radd__(self, other):
        return self.tape.add(other, self)

    def __mul__(self, other):
        return self.tape.mul(self, other)

    def __rmul__(self, other):
        return self.tape.mul(other, self)

    def __sub__(self, other):
        return self.tape.sub(self, other)

    def __matmul__(self, other):
        return self.tape.matmul(self, other)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to the shape the operand actually had."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _expand_for_reduction(grad, in_shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(grad, in_shape)
    g = grad if keepdims else np.expand_dims(grad, axis)
    return np.broadcast_to(g, in_shape)


# kind -> (forward(values, meta) -> array, backward(out_grad, out, values, meta) -> per-input grads)

def _fw_add(values, meta):
    try:
        return values[0] + values[1]
    except ValueError as exc:
        raise DimensionError(f"add shapes incompatible: {values[0].shape} + {values[1].shape}") from exc


def _bw_add(g, out, values, meta):
    return (_unbroadcast(g, values[0].shape), _unbroadcast(g, values[1].shape))


def _fw_mul(values, meta):
    try:
        return values[0] * values[1]
    except ValueError as exc:
        raise DimensionError(f"mul shapes incompatible: {values[0].shape} * {values[1].shape}") from exc


def _bw_mul(g, out, values, meta):
    a, b = values
    return (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape))


def _fw_matmul(values, meta):
    return _matmul_raw(values[0], values[1])


def _bw_matmul(g, out, values, meta):
    a, b = values
    return (g @ b.T, a.T @ g)


def _fw_sigmoid(values, meta):
    return _sigmoid_raw(values[0])


def _bw_sigmoid(g, out, values, meta):
    return (g * out * (1.0 - out),)


def _fw_softplus(values, meta):
    return _softplus_raw(values[0])


def _bw_softplus(g, out, values, meta):
    return (g * _sigmoid_raw(values[0]),)


def _fw_softmax(values, meta):
    return _softmax_raw(values[0], meta["axis"])


def _bw_softmax(g, out, values, meta):
    axis = meta["axis"]
    inner = (g * out).sum(axis=axis, keepdims=True)
    return (out * (g - inner),)


def _fw_log(values, meta):
    return np.log(values[0])


def _bw_log(g, out, values, meta):
    return (g / values[0],)


def _fw_power(values, meta):
    return np.power(values[0], meta["exponent"])


def _bw_power(g, out, values, meta):
    p = meta["exponent"]
    return (g * p * np.power(values[0], p - 1.0),)


def _fw_clip(values, meta):
    return np.clip(values[0], meta["lo"], meta["hi"])


def _bw_clip(g, out, values, meta):
    x = values[0]
    inside = (x >= meta["lo"]) & (x <= meta["hi"])
    return (g * inside,)


def _fw_sum(values, meta):
    return values[0].sum(axis=meta["axis"], keepdims=meta["keepdims"])


def _bw_sum(g, out, values, meta):
    return (_expand_for_reduction(g, values[0].shape, meta["axis"], meta["keepdims"]).copy(),)


def _fw_mean(values, meta):
    return values[0].mean(axis=meta["axis"], keepdims=meta["keepdims"])


def _bw_mean(g, out, values, meta):
    x = values[0]
    axis = meta["axis"]
    count = x.size if axis is None else x.shape[axis]
    expanded = _expand_for_reduction(g, x.shape, axis, meta["keepdims"])
    return (expanded / count,)


def _fw_l2_normalize(values, meta):
    return _l2_normalize_raw(values[0], meta["axis"])


def _bw_l2_normalize(g, out, values, meta):
    x = values[0]
    axis = meta["axis"]
    norms = np.sqrt((x * x).sum(axis=axis, keepdims=True))
    safe = np.where(norms == 0.0, 1.0, norms)
    inner = (g * out).sum(axis=axis, keepdims=True)
    grad = (g - out * inner) / safe
    # zero slices map to zero output by convention; their gradient is zero too
    return (np.where(norms == 0.0, 0.0, grad),)


def _fw_avg_pool(values, meta):
    return _avg_pool_raw(values[0], meta["box"])


def _bw_avg_pool(g, out, values, meta):
    x = values[0]
    box: BBox = meta["box"]
    grad = np.zeros_like(x)
    grad[:, box.row_min:box.row_max + 1, box.col_min:box.col_max + 1] = (
        g[:, None, None] / box.area)
    return (grad,)


_FORWARD: dict[str, Callable] = {
    "add": _fw_add, "mul": _fw_mul, "matmul": _fw_matmul,
    "sigmoid": _fw_sigmoid, "softplus": _fw_softplus, "softmax": _fw_softmax,
    "log": _fw_log, "power": _fw_power, "clip": _fw_clip,
    "sum": _fw_sum, "mean": _fw_mean,
    "l2_normalize": _fw_l2_normalize, "avg_pool": _fw_avg_pool,
}

_BACKWARD: dict[str, Callable] = {
    "add": _bw_add, "mul": _bw_mul, "matmul": _bw_matmul,
    "sigmoid": _bw_sigmoid, "softplus": _bw_softplus, "softmax": _bw_softmax,
    "log": _bw_log, "power": _bw_power, "clip": _bw_clip,
    "sum": _bw_sum, "mean": _bw_mean,
    "l2_normalize": _bw_l2_normalize, "avg_pool": _bw_avg_pool,
}


class GradTape:
    """Recorded operation graph with marked differentiable parameters."""

    def __init__(self):
        self._nodes: list[_Node] = []
        self._params: dict[str, int] = {}

    # ------------------------------------------------------------------ leaves

    def param(self, name: str, init) -> Var:
        """Mark a leaf tensor as differentiable under `name`."""
        if name in self._params:
            raise ContractError(f"duplicate parameter name {name!r}")
        arr = init.data.copy() if isinstance(init, Tensor) else np.array(init, dtype=np.float64)
        node = _Node("leaf", (), None, arr, True, name=name)
        self._nodes.append(node)
        self._params[name] = len(self._nodes) - 1
        return Var(self, len(self._nodes) - 1)

    def const(self, value: ArrayLike) -> Var:
        if isinstance(value, Var):
            return value
        if isinstance(value, Tensor):
            arr = value.data
        else:
            arr = np.asarray(value, dtype=np.float64)
        self._nodes.append(_Node("leaf", (), None, arr, False))
        return Var(self, len(self._nodes) - 1)

    @property
    def parameter_names(self) -> tuple[str, ...]:
        return tuple(self._params)

    # -------------------------------------------------------------- recording

    def _record(self, kind: str, inputs: Sequence[ArrayLike], meta=None) -> Var:
        vars_ = [v if isinstance(v, Var) else self.const(v) for v in inputs]
        for v in vars_:
            if v.tape is not self:
                raise ContractError("operands belong to a different tape")
        ids = tuple(v.index for v in vars_)
        values = [self._nodes[i].value for i in ids]
        out = _FORWARD[kind](values, meta)
        needs = any(self._nodes[i].needs_grad for i in ids)
        self._nodes.append(_Node(kind, ids, meta, np.asarray(out, dtype=np.float64), needs))
        return Var(self, len(self._nodes) - 1)

    def add(self, a: ArrayLike, b: ArrayLike) -> Var:
        return self._record("add", (a, b))

    def mul(self, a: ArrayLike, b: ArrayLike) -> Var:
        return self._record("mul", (a, b))

    def sub(self, a: ArrayLike, b: ArrayLike) -> Var:
        return self.add(a, self.mul(b, -1.0))

    def div(self, a: ArrayLike, b: ArrayLike) -> Var:
        return self.mul(a, self.power(b, -1.0))

    def matmul(self, a: ArrayLike, b: ArrayLike) -> Var:
        return self._record("matmul", (a, b))

    def sigmoid(self, x: ArrayLike) -> Var:
        return self._record("sigmoid", (x,))

    def softplus(self, x: ArrayLike) -> Var:
        return self._record("softplus", (x,))

    def softmax(self, x: ArrayLike, axis: int) -> Var:
        x = x if isinstance(x, Var) else self.const(x)
        return self._record("softmax", (x,), {"axis": _check_axis(x.array, axis)})

    def log(self, x: ArrayLike) -> Var:
        return self._record("log", (x,))

    def power(self, x: ArrayLike, exponent: float) -> Var:
        return self._record("power", (x,), {"exponent": float(exponent)})

    def clip(self, x: ArrayLike, lo: float, hi: float) -> Var:
        return self._record("clip", (x,), {"lo": float(lo), "hi": float(hi)})

    def sum(self, x: ArrayLike, axis: Optional[int] = None, keepdims: bool = False) -> Var:
        x = x if isinstance(x, Var) else self.const(x)
        ax = None if axis is None else _check_axis(x.array, axis)
        return self._record("sum", (x,), {"axis": ax, "keepdims": keepdims})

    def mean(self, x: ArrayLike, axis: Optional[int] = None, keepdims: bool = False) -> Var:
        x = x if isinstance(x, Var) else self.const(x)
        ax = None if axis is None else _check_axis(x.array, axis)
        return self._record("mean", (x,), {"axis": ax, "keepdims": keepdims})

    def l2_normalize(self, x: ArrayLike, axis: int) -> Var:
        x = x if isinstance(x, Var) else self.const(x)
        return self._record("l2_normalize", (x,), {"axis": _check_axis(x.array, axis)})

    def avg_pool(self, x: ArrayLike, box: BBox) -> Var:
        return self._record("avg_pool", (x,), {"box": box})

    # ------------------------------------------------------------------ engine

    def replay(self) -> None:
        """Recompute every node value in recording order."""
        for node in self._nodes:
            if node.kind == "leaf":
                continue
            values = [self._nodes[i].value for i in node.inputs]
            node.value = np.asarray(_FORWARD[node.kind](values, node.meta), dtype=np.float64)

    def set_param(self, name: str, value) -> None:
        """Overwrite a parameter leaf; call replay() to refresh the graph."""
        idx = self._params.get(name)
        if idx is None:
            raise ContractError(f"unknown parameter {name!r}")
        arr = value.data.copy() if isinstance(value, Tensor) else np.array(value, dtype=np.float64)
        if arr.shape != self._nodes[idx].value.shape:
            raise DimensionError(
                f"parameter {name!r} has shape {self._nodes[idx].value.shape}, got {arr.shape}")
        self._nodes[idx].value = arr

    def grad(self, loss: Var) -> dict[str, Tensor]:
        """Exact reverse-mode gradients of a scalar loss for all parameters."""
        if loss.tape is not self:
            raise ContractError("loss was recorded on a different tape")
        if self._nodes[loss.index].value.shape != ():
            raise ContractError(
                f"loss must be a scalar, got shape {self._nodes[loss.index].value.shape}")
        grads: dict[int, np.ndarray] = {loss.index: np.ones((), dtype=np.float64)}
        for idx in range(loss.index, -1, -1):
            node = self._nodes[idx]
            g = grads.pop(idx, None)
            if g is None or not node.needs_grad or node.kind == "leaf":
                if node.kind == "leaf" and node.name is not None and g is not None:
                    grads[idx] = g  # keep parameter grads
                continue
            backward = _BACKWARD.get(node.kind)
            if backward is None:
                raise UnsupportedOpError(f"no gradient registered for op {node.kind!r}")
            values = [self._nodes[i].value for i in node.inputs]
            in_grads = backward(g, node.value, values, node.meta)
            for in_id, in_grad in zip(node.inputs, in_grads):
                if not self._nodes[in_id].needs_grad:
                    continue
                if in_id in grads:
                    grads[in_id] = grads[in_id] + in_grad
                else:
                    grads[in_id] = np.asarray(in_grad, dtype=np.float64)
        out: dict[str, Tensor] = {}
        for name, idx in self._params.items():
            g = grads.get(idx)
            if g is None:
                g = np.zeros_like(self._nodes[idx].value)
            out[name] = Tensor(np.broadcast_to(g, self._nodes[idx].value.shape))
        return out


def grad(tape: GradTape, loss: Var) -> dict[str, Tensor]:
    """Module-level alias for `GradTape.grad`."""
    return tape.grad(loss)
