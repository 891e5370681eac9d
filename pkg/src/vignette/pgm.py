"""Binary PGM (P5, maxval 255) reading and writing."""

from __future__ import annotations

import os
import re
from pathlib import Path

import numpy as np

from vignette.errors import InputError

_HEADER = re.compile(rb"P5\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s")


def read_pgm(path) -> np.ndarray:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    m = _HEADER.match(data)
    if m is None:
        raise InputError(f"{path}: not a binary PGM (P5) image")
    width, height, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise InputError(f"{path}: maxval {maxval} unsupported, expected 255")
    if width <= 0 or height <= 0:
        raise InputError(f"{path}: bad dimensions {width}x{height}")
    body = data[m.end():]
    if len(body) < width * height:
        raise InputError(f"{path}: truncated pixel data")
    return np.frombuffer(body, dtype=np.uint8, count=width * height).reshape(height, width).copy()


def write_pgm(path, image: np.ndarray) -> None:
    """Write an 8-bit grid atomically (temp file + rename)."""
    arr = np.asarray(image)
    if arr.ndim != 2:
        raise InputError("PGM images must be 2-D")
    if arr.dtype != np.uint8:
        if arr.size and (arr.min() < 0 or arr.max() > 255):
            raise InputError("PGM values must lie in [0, 255]")
        arr = arr.astype(np.uint8)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (arr.shape[1], arr.shape[0]))
        fh.write(np.ascontiguousarray(arr).tobytes())
    os.replace(tmp, path)
