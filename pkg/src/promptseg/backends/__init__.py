"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

The active backend is chosen once at import time from the environment
variable ``PROMPTSEG_BACKEND``:

* unset or ``auto`` -- numba when importable, else numpy
* ``numba``         -- force the jitted path (warns and falls back if
                       numba is unavailable)
* ``numpy``         -- force the pure-numpy path

The flag selects an acceleration strategy only; both backends implement
the same contracts and agree to floating-point round-off. Run
``benchmarks/bench_backends.py`` to compare them on your machine.
"""

from __future__ import annotations

import os
import warnings

import numpy as np

from . import _numpy_impl

ENV_VAR = "PROMPTSEG_BACKEND"

_IMPLS = {"numpy": _numpy_impl}
try:
    from . import _numba_impl
    _IMPLS["numba"] = _numba_impl
except ImportError:  # numba missing or broken: numpy path still works
    _numba_impl = None


def _initial_backend() -> str:
    requested = os.environ.get(ENV_VAR, "auto").strip().lower()
    if requested in ("", "auto"):
        return "numba" if "numba" in _IMPLS else "numpy"
    if requested not in ("numpy", "numba"):
        warnings.warn(f"{ENV_VAR}={requested!r} not recognized; using auto selection")
        return "numba" if "numba" in _IMPLS else "numpy"
    if requested == "numba" and "numba" not in _IMPLS:
        warnings.warn("numba backend requested but numba is not importable; using numpy")
        return "numpy"
    return requested


_active = _IMPLS[_initial_backend()]


def backend_name() -> str:
    """Name of the currently active backend ('numba' or 'numpy')."""
    return _active.NAME


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_IMPLS))


def set_backend(name: str) -> str:
    """Switch backends at runtime (used by tests and benchmarks)."""
    global _active
    if name not in _IMPLS:
        raise ValueError(f"unknown backend {name!r}; available: {available_backends()}")
    _active = _IMPLS[name]
    return _active.NAME


def label_components(foreground: np.ndarray) -> tuple[np.ndarray, int]:
    """4-connected components of a binary map; labels 1..count, background 0."""
    return _active.label_components(foreground)


def resize_bilinear(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resample of a 2-D float map."""
    return _active.resize_bilinear(src, int(out_h), int(out_w))


def mask_pair_costs(mask_logits: np.ndarray, gt: np.ndarray,
                    dice_eps: float) -> tuple[np.ndarray, np.ndarray]:
    """(dice, cross-entropy) cost matrices between predicted and target masks."""
    return _active.mask_pair_costs(mask_logits, gt, dice_eps)


def warmup() -> None:
    """Trigger jit compilation on tiny inputs so timed sections stay clean."""
    fg = np.zeros((2, 2), dtype=bool)
    fg[0, 0] = True
    label_components(fg)
    resize_bilinear(np.zeros((2, 2)), 3, 3)
    mask_pair_costs(np.zeros((1, 4)), np.ones((1, 4)), 1e-3)
