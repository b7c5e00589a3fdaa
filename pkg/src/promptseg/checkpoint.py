"""Checkpoint files: concatenated ".ten" tensors behind a JSON index.

Layout: 8-byte little-endian index length, the UTF-8 JSON index
(names, offsets, shapes, config echo), then the tensor blobs at the
recorded offsets. Tensors round-trip through float32, matching the
".ten" on-disk precision.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

from .errors import FormatError
from .head import KernelBank, arrays_to_bank, bank_to_arrays
from .numerics import Tensor, bytes_to_tensor, tensor_to_bytes


def save_checkpoint(path, bank: KernelBank, config_echo: dict | None = None) -> None:
    arrays = bank_to_arrays(bank)
    blobs = []
    index = {"tensors": [], "num_stages": bank.num_stages,
             "config": config_echo or {}}
    offset = 0
    for name in sorted(arrays):
        blob = tensor_to_bytes(Tensor(arrays[name], copy=False))
        index["tensors"].append({
            "name": name,
            "offset": offset,
            "length": len(blob),
            "shape": list(arrays[name].shape),
        })
        blobs.append(blob)
        offset += len(blob)
    head = json.dumps(index, sort_keys=True, separators=(",", ":")).encode("utf-8")
    Path(path).write_bytes(struct.pack("<Q", len(head)) + head + b"".join(blobs))


def load_checkpoint(path) -> tuple[KernelBank, dict]:
    p = Path(path)
    if not p.is_file():
        raise FormatError(f"checkpoint not found: {p}")
    blob = p.read_bytes()
    if len(blob) < 8:
        raise FormatError("checkpoint shorter than its length header")
    (head_len,) = struct.unpack_from("<Q", blob, 0)
    if len(blob) < 8 + head_len:
        raise FormatError("checkpoint index truncated")
    try:
        index = json.loads(blob[8:8 + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable checkpoint index: {exc}") from exc
    payload = blob[8 + head_len:]
    arrays = {}
    for entry in index["tensors"]:
        chunk = payload[entry["offset"]:entry["offset"] + entry["length"]]
        if len(chunk) != entry["length"]:
            raise FormatError(f"tensor {entry['name']!r} truncated")
        t = bytes_to_tensor(chunk)
        if list(t.shape) != entry["shape"]:
            raise FormatError(
                f"tensor {entry['name']!r} has shape {t.shape}, "
                f"index says {entry['shape']}")
        arrays[entry["name"]] = t.data
    return arrays_to_bank(arrays, index["num_stages"]), index.get("config", {})
