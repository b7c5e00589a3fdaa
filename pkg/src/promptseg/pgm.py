"""Binary PGM (P5, maxval 255) reading and writing."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import FormatError


def write_pgm(path, values: np.ndarray) -> None:
    """Write a uint8 image; bools become 0/255, floats in [0,1] scale to 0..255."""
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise FormatError(f"PGM needs a 2-D image, got shape {arr.shape}")
    if arr.dtype == np.bool_:
        img = np.where(arr, 255, 0).astype(np.uint8)
    elif np.issubdtype(arr.dtype, np.floating):
        img = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    else:
        img = arr.astype(np.uint8)
    h, w = img.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + img.tobytes(order="C"))


def read_pgm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if blob[:2] != b"P5":
        raise FormatError(f"not a binary PGM: {path}")
    # header tokens may be separated by any whitespace and '#' comments
    tokens = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"truncated PGM header: {path}")
        tokens.append(blob[start:pos])
    pos += 1  # single whitespace byte after maxval
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise FormatError(f"bad PGM header in {path}") from exc
    if maxval != 255:
        raise FormatError(f"PGM maxval must be 255, got {maxval}")
    expected = w * h
    data = blob[pos:pos + expected]
    if len(data) != expected:
        raise FormatError(f"PGM payload truncated: {path}")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w).copy()


def read_mask_pgm(path) -> np.ndarray:
    """Read a binary mask; 255 marks foreground (>=128 tolerated)."""
    return read_pgm(path) >= 128
