"""Block motion vectors: CSV dumps, external extractors, block matching."""

from __future__ import annotations

import csv
import os
import shlex
import subprocess
from dataclasses import dataclass

import numpy as np

from vignette.errors import ConfigError, EncoderError, InputError

CSV_HEADER = ("frame", "block_x", "block_y", "dx", "dy")


@dataclass(frozen=True, eq=False)
class MotionField:
    """Motion vectors of one frame as an ``(n, 4)`` int array of
    ``block_x, block_y, dx, dy`` rows."""

    frame_index: int
    entries: np.ndarray
    frame_w: int
    frame_h: int

    def __post_init__(self):
        arr = np.asarray(self.entries, dtype=np.int64).reshape(-1, 4)
        if arr.size:
            bx, by = arr[:, 0], arr[:, 1]
            if bx.min() < 0 or bx.max() >= self.frame_w or by.min() < 0 or by.max() >= self.frame_h:
                raise InputError(f"frame {self.frame_index}: block origin outside "
                                 f"{self.frame_w}x{self.frame_h} frame")
        arr.setflags(write=False)
        object.__setattr__(self, "entries", arr)

    def __len__(self):
        return self.entries.shape[0]

    def __eq__(self, other):
        if not isinstance(other, MotionField):
            return NotImplemented
        return (self.frame_index, self.frame_w, self.frame_h) == \
            (other.frame_index, other.frame_w, other.frame_h) and np.array_equal(self.entries, other.entries)

    def magnitudes(self) -> np.ndarray:
        return np.hypot(self.entries[:, 2], self.entries[:, 3])


def parse_motion_dump(path, frame_w: int, frame_h: int) -> list[MotionField]:
    """Read a ``frame,block_x,block_y,dx,dy`` CSV into one field per frame.

    Fields come out in order of first appearance; entries keep file order.
    """
    rows: dict[int, list] = {}
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise InputError(f"cannot read motion dump {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return []
        if tuple(h.strip() for h in header) != CSV_HEADER:
            raise InputError(f"{path}:1: expected header {','.join(CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 5:
                raise InputError(f"{path}:{lineno}: expected 5 columns, got {len(row)}")
            try:
                frame, bx, by, dx, dy = (int(c) for c in row)
            except ValueError:
                raise InputError(f"{path}:{lineno}: non-integer value in {row}") from None
            if not (0 <= bx < frame_w and 0 <= by < frame_h):
                raise InputError(f"{path}:{lineno}: block ({bx},{by}) outside {frame_w}x{frame_h} frame")
            if frame < 0:
                raise InputError(f"{path}:{lineno}: negative frame index")
            rows.setdefault(frame, []).append((bx, by, dx, dy))
    return [MotionField(f, np.array(v, dtype=np.int64), frame_w, frame_h) for f, v in rows.items()]


def write_motion_dump(path, fields) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for f in fields:
            for bx, by, dx, dy in f.entries.tolist():
                w.writerow((f.frame_index, bx, by, dx, dy))


def select_frames(fields, start: int, stop: int) -> list[MotionField]:
    """Fields whose frame index falls in ``[start, stop)``, re-based to ``start``."""
    return [MotionField(f.frame_index - start, f.entries, f.frame_w, f.frame_h)
            for f in fields if start <= f.frame_index < stop]


def run_extractor(command_template: str, video_path, out_csv, frame_w: int, frame_h: int) -> list[MotionField]:
    """Run an external MV dumper that writes the motion CSV format.

    The template needs ``{input}`` and ``{output}`` placeholders.
    """
    if "{input}" not in command_template or "{output}" not in command_template:
        raise ConfigError("motion extractor command needs {input} and {output} placeholders")
    cmd = [part.format(input=os.fspath(video_path), output=os.fspath(out_csv))
           for part in shlex.split(command_template)]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        raise EncoderError(f"motion extractor exited {proc.returncode}: {proc.stderr.strip()[:300]}")
    return parse_motion_dump(out_csv, frame_w, frame_h)


def estimate_block_motion(luma, block: int = 16, search: int = 4) -> list[MotionField]:
    """Full-search SAD block matching between consecutive luma frames.

    Used when no MV dump or extractor is available.  Each vector points from
    the block in frame ``t`` to its best match in frame ``t - 1``; frame 0
    gets no vectors.  Ties prefer the smaller displacement, then the scan
    order, so the result is deterministic.
    """
    luma = np.asarray(luma, dtype=np.int16)
    n, h, w = luma.shape
    by_n, bx_n = h // block, w // block
    if by_n == 0 or bx_n == 0:
        return [MotionField(i, np.empty((0, 4)), w, h) for i in range(n)]
    offsets = sorted(((dy, dx) for dy in range(-search, search + 1) for dx in range(-search, search + 1)),
                     key=lambda o: (o[0] ** 2 + o[1] ** 2, o))
    ys = np.arange(by_n) * block
    xs = np.arange(bx_n) * block
    gx, gy = np.meshgrid(xs, ys)
    fields = [MotionField(0, np.empty((0, 4)), w, h)]
    for t in range(1, n):
        cur = luma[t, :by_n * block, :bx_n * block].reshape(by_n, block, bx_n, block)
        ref = np.pad(luma[t - 1], search, mode="edge")
        best = np.full((by_n, bx_n), np.iinfo(np.int64).max, dtype=np.int64)
        best_dy = np.zeros((by_n, bx_n), dtype=np.int64)
        best_dx = np.zeros((by_n, bx_n), dtype=np.int64)
        for dy, dx in offsets:
            cand = ref[search + dy:search + dy + by_n * block, search + dx:search + dx + bx_n * block]
            diff = np.abs(cur - cand.reshape(by_n, block, bx_n, block)).astype(np.int32)
            # reduce the contiguous axis first; much faster than a joint reduce
            sad = diff.sum(axis=3).sum(axis=1)
            better = sad < best
            best = np.where(better, sad, best)
            best_dy = np.where(better, dy, best_dy)
            best_dx = np.where(better, dx, best_dx)
        entries = np.stack([gx.ravel(), gy.ravel(), best_dx.ravel(), best_dy.ravel()], axis=1)
        fields.append(MotionField(t, entries, w, h))
    return fields
