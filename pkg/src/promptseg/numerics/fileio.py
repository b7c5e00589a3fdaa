"""Bit-exact binary tensor files (".ten").

Layout: magic b"UPLT", version byte 0x01, dtype byte 0x00 (32-bit
IEEE-754 little-endian), ndim byte, ndim x uint32-LE dims, then the
row-major float32 payload.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError
from .tensor import Tensor

MAGIC = b"UPLT"
VERSION = 0x01
DTYPE_F32 = 0x00


def tensor_to_bytes(t: Tensor | np.ndarray) -> bytes:
    arr = t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)
    payload = np.ascontiguousarray(arr, dtype="<f4")
    if arr.ndim > 255:
        raise FormatError(f"too many dimensions for the format: {arr.ndim}")
    head = MAGIC + bytes([VERSION, DTYPE_F32, arr.ndim])
    dims = b"".join(struct.pack("<I", int(d)) for d in arr.shape)
    return head + dims + payload.tobytes(order="C")


def bytes_to_tensor(blob: bytes) -> Tensor:
    if len(blob) < 7:
        raise FormatError("tensor file shorter than its fixed header")
    if blob[:4] != MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
    version, dtype, ndim = blob[4], blob[5], blob[6]
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    if dtype != DTYPE_F32:
        raise FormatError(f"unsupported dtype byte {dtype}")
    dims_end = 7 + 4 * ndim
    if len(blob) < dims_end:
        raise FormatError("truncated dimension table")
    shape = tuple(struct.unpack_from("<I", blob, 7 + 4 * i)[0] for i in range(ndim))
    count = 1
    for d in shape:
        count *= d
    expected = dims_end + 4 * count
    if len(blob) != expected:
        raise FormatError(f"payload length {len(blob) - dims_end} bytes, expected {4 * count}")
    values = np.frombuffer(blob, dtype="<f4", count=count, offset=dims_end)
    if values.size and not np.isfinite(values).all():
        raise FormatError("payload contains non-finite values")
    return Tensor(values.astype(np.float64).reshape(shape), copy=False)


def write_ten(path, t: Tensor | np.ndarray) -> None:
    Path(path).write_bytes(tensor_to_bytes(t))


def read_ten(path) -> Tensor:
    p = Path(path)
    if not p.is_file():
        raise FormatError(f"tensor file not found: {p}")
    return bytes_to_tensor(p.read_bytes())


def quantize32(arr: np.ndarray) -> np.ndarray:
    """Round to the float32 grid so the array round-trips files exactly."""
    return np.asarray(arr, dtype=np.float64).astype(np.float32).astype(np.float64)
