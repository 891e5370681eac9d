"""Tile-saliency metadata records and their MP4 / sidecar carriage.

Record layout (``8 + rows * cols`` bytes)::

    0..3   b"VGNT"
    4      version (1)
    5      rows
    6      cols
    7..    rows*cols tile weights, row-major
    last   XOR of every preceding byte

Inside an MP4 the record travels as the payload of a top-level ``uuid`` box
with usertype ``b"vgnt-saliency-v1"`` appended after the existing boxes, so
no chunk offsets move and players that do not know the box skip it.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from functools import reduce
from operator import xor
from pathlib import Path
from typing import Iterator, NamedTuple

from vignette.errors import ContainerError, MetadataError

MAGIC = b"VGNT"
VERSION = 1
USERTYPE = b"vgnt-saliency-v1"
SIDECAR_SUFFIX = ".vgnt"
MAX_PAYLOAD = 2 ** 32 - 25

assert len(USERTYPE) == 16


@dataclass(frozen=True)
class PerceptualMetadata:
    rows: int
    cols: int
    weights: tuple[int, ...]
    version: int = VERSION

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(int(w) for w in self.weights))
        if not (1 <= self.rows <= 255 and 1 <= self.cols <= 255):
            raise MetadataError(f"rows and cols must be in 1..255, got {self.rows}x{self.cols}")
        if len(self.weights) != self.rows * self.cols:
            raise MetadataError(f"{self.rows}x{self.cols} grid needs {self.rows * self.cols} weights, "
                                f"got {len(self.weights)}")
        if any(not 0 <= w <= 255 for w in self.weights):
            raise MetadataError("weights must be bytes (0..255)")
        if not 0 <= self.version <= 255:
            raise MetadataError("version must fit in one byte")

    @property
    def encoded_size(self) -> int:
        return 8 + self.rows * self.cols


def encode_metadata(m: PerceptualMetadata) -> bytes:
    body = MAGIC + bytes([m.version, m.rows, m.cols]) + bytes(m.weights)
    return body + bytes([reduce(xor, body, 0)])


def decode_metadata(b: bytes) -> PerceptualMetadata:
    b = bytes(b)
    if len(b) < 8:
        raise MetadataError(f"record too short ({len(b)} bytes)")
    if b[:4] != MAGIC:
        raise MetadataError(f"bad magic {b[:4]!r}")
    if b[4] != VERSION:
        raise MetadataError(f"unsupported metadata version {b[4]}")
    rows, cols = b[5], b[6]
    if len(b) != 8 + rows * cols:
        raise MetadataError(f"length {len(b)} does not match {rows}x{cols} grid ({8 + rows * cols} bytes)")
    if reduce(xor, b[:-1], 0) != b[-1]:
        raise MetadataError("checksum mismatch")
    return PerceptualMetadata(rows, cols, tuple(b[7:-1]), version=b[4])


class Box(NamedTuple):
    offset: int
    size: int
    type: bytes
    header_size: int

    @property
    def end(self) -> int:
        return self.offset + self.size


def iter_boxes(data: bytes, start: int = 0, end: int | None = None) -> Iterator[Box]:
    """Walk a run of sibling ISO-BMFF boxes (32-bit and 64-bit sizes).

    A size of 0 means "to the end of the run".
    """
    end = len(data) if end is None else end
    pos = start
    while pos < end:
        if end - pos < 8:
            raise ContainerError(f"truncated box header at offset {pos}")
        size, btype = struct.unpack_from(">I4s", data, pos)
        header = 8
        if size == 1:
            if end - pos < 16:
                raise ContainerError(f"truncated largesize header at offset {pos}")
            (size,) = struct.unpack_from(">Q", data, pos + 8)
            header = 16
        elif size == 0:
            size = end - pos
        if btype == b"uuid":
            header += 16
        if size < header or pos + size > end:
            raise ContainerError(f"box {btype!r} at offset {pos} has invalid size {size}")
        yield Box(pos, size, btype, header)
        pos += size


def parse_boxes(data: bytes) -> list[Box]:
    return list(iter_boxes(data))


def _is_vignette_box(data: bytes, box: Box) -> bool:
    if box.type != b"uuid":
        return False
    ut_at = box.offset + box.header_size - 16
    return data[ut_at:ut_at + 16] == USERTYPE


def make_box(btype: bytes, payload: bytes, usertype: bytes | None = None) -> bytes:
    extra = usertype or b""
    size = 8 + len(extra) + len(payload)
    if size < 2 ** 32:
        return struct.pack(">I4s", size, btype) + extra + payload
    return struct.pack(">I4sQ", 1, btype, size + 8) + extra + payload


def make_vignette_box(payload: bytes) -> bytes:
    if len(payload) > MAX_PAYLOAD:
        raise ContainerError(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
    return make_box(b"uuid", payload, USERTYPE)


def strip_vignette_boxes(data: bytes) -> bytes:
    boxes = parse_boxes(data)
    if not boxes:
        raise ContainerError("no ISO-BMFF boxes found")
    return b"".join(data[b.offset:b.end] for b in boxes if not _is_vignette_box(data, b))


def embed_bytes(data: bytes, payload: bytes) -> bytes:
    box = make_vignette_box(payload)
    boxes = parse_boxes(data)
    if not boxes:
        raise ContainerError("no ISO-BMFF boxes found")
    # a trailing size-0 box extends to EOF and would swallow the appended box
    if boxes and struct.unpack_from(">I", data, boxes[-1].offset)[0] == 0:
        last = boxes[-1]
        fixed = struct.pack(">I", last.size) if last.size < 2 ** 32 else None
        if fixed is None:
            raise ContainerError("cannot append after an open-ended box larger than 4 GiB")
        data = data[:last.offset] + fixed + data[last.offset + 4:]
    return strip_vignette_boxes(data) + box


def extract_bytes(data: bytes) -> bytes | None:
    found = None
    for b in iter_boxes(data):
        if _is_vignette_box(data, b):
            found = data[b.offset + b.header_size:b.end]
    return found


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def embed_in_container(mp4_path, payload: bytes, out_path=None) -> Path:
    """Append (or replace) the saliency box; rewrites in place by default."""
    src = Path(mp4_path)
    try:
        data = src.read_bytes()
    except OSError as exc:
        raise ContainerError(f"cannot read {src}: {exc}") from exc
    out = Path(out_path) if out_path is not None else src
    _atomic_write(out, embed_bytes(data, payload))
    return out


def extract_from_container(mp4_path) -> bytes | None:
    """The saliency payload, or ``None`` when the file carries none."""
    try:
        data = Path(mp4_path).read_bytes()
    except OSError as exc:
        raise ContainerError(f"cannot read {mp4_path}: {exc}") from exc
    return extract_bytes(data)


def sidecar_path(media_path) -> Path:
    p = Path(media_path)
    return p.with_name(p.name + SIDECAR_SUFFIX) if p.suffix else p.with_suffix(SIDECAR_SUFFIX)


def write_sidecar(media_path, payload: bytes) -> Path:
    path = sidecar_path(media_path)
    _atomic_write(path, payload)
    return path


def read_metadata(path) -> PerceptualMetadata | None:
    """Decode the record from a ``.vgnt`` sidecar or from an MP4 container."""
    p = Path(path)
    if p.suffix == SIDECAR_SUFFIX:
        return decode_metadata(p.read_bytes())
    payload = extract_from_container(p)
    if payload is None:
        side = sidecar_path(p)
        if side.exists():
            return decode_metadata(side.read_bytes())
        return None
    return decode_metadata(payload)
