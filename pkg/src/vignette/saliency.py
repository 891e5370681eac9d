"""Per-frame saliency maps, segment aggregation and fixation blending.

Maps are stored as ``uint8`` numpy arrays of shape ``(height, width)``; a
frame sequence is a ``(frames, height, width)`` array.  Every type here is
treated as an immutable value: arrays handed out are read-only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from vignette.errors import DimensionError, InputError
from vignette.pgm import read_pgm

CENTER_SIGMA_FRAC = 0.3


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.uint8, copy=True)
    arr.setflags(write=False)
    return arr


def _as_u8_grid(values, what: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.dtype != np.uint8:
        if arr.size and (np.min(arr) < 0 or np.max(arr) > 255):
            raise InputError(f"{what} values must lie in [0, 255]")
        if np.issubdtype(arr.dtype, np.floating) and not np.all(arr == np.round(arr)):
            raise InputError(f"{what} values must be integers")
    return arr.astype(np.uint8)


@dataclass(frozen=True, eq=False)
class SaliencyMap:
    values: np.ndarray

    def __post_init__(self):
        arr = _as_u8_grid(self.values, "saliency")
        if arr.ndim != 2 or 0 in arr.shape:
            raise DimensionError(f"saliency map must be a non-empty 2-D grid, got shape {arr.shape}")
        object.__setattr__(self, "values", _frozen(arr))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def __eq__(self, other):
        if not isinstance(other, SaliencyMap):
            return NotImplemented
        return np.array_equal(self.values, other.values)

    @classmethod
    def load(cls, path) -> "SaliencyMap":
        return cls(read_pgm(path))


# A fixation map has the same shape and value range as a saliency map.
FixationMap = SaliencyMap


@dataclass(frozen=True, eq=False)
class FrameSaliencySequence:
    frames: np.ndarray

    def __post_init__(self):
        if isinstance(self.frames, (list, tuple)):
            if not self.frames:
                raise InputError("a saliency sequence needs at least one frame")
            shapes = {np.shape(f) for f in self.frames}
            if len(shapes) != 1:
                raise DimensionError(f"frame dimensions differ: {sorted(shapes)}")
        arr = _as_u8_grid(self.frames, "saliency")
        if arr.ndim != 3 or 0 in arr.shape:
            raise DimensionError(f"expected (frames, height, width), got shape {arr.shape}")
        object.__setattr__(self, "frames", _frozen(arr))

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    def __len__(self) -> int:
        return self.frames.shape[0]

    def __getitem__(self, i) -> np.ndarray:
        return self.frames[i]


def load_map_sequence(paths: Sequence) -> FrameSaliencySequence:
    """Load one PGM per frame, keeping the order of ``paths``."""
    paths = list(paths)
    if not paths:
        raise InputError("no saliency map files given")
    frames = []
    for p in paths:
        img = read_pgm(p)
        if frames and img.shape != frames[0].shape:
            raise DimensionError(
                f"{p}: {img.shape[1]}x{img.shape[0]} does not match "
                f"{frames[0].shape[1]}x{frames[0].shape[0]}"
            )
        frames.append(img)
    return FrameSaliencySequence(np.stack(frames))


def aggregate(seq: FrameSaliencySequence) -> SaliencyMap:
    """Pointwise maximum over all frames of the segment."""
    return SaliencyMap(seq.frames.max(axis=0))


def center_prior(width: int, height: int) -> np.ndarray:
    """Isotropic Gaussian centred on the frame, sigma = 0.3 * min(w, h)."""
    sigma = CENTER_SIGMA_FRAC * min(width, height)
    ys = np.arange(height, dtype=np.float64) - (height - 1) / 2.0
    xs = np.arange(width, dtype=np.float64) - (width - 1) / 2.0
    return np.exp(-(ys[:, None] ** 2 + xs[None, :] ** 2) / (2.0 * sigma * sigma))


def _normalize_0_255(values: np.ndarray) -> np.ndarray:
    peak = values.max()
    if peak <= 0:
        return np.zeros(values.shape, dtype=np.uint8)
    return np.floor(values * (255.0 / peak) + 0.5).astype(np.uint8)


def generate_builtin(video_frames) -> FrameSaliencySequence:
    """Deterministic classical saliency: centre prior times temporal contrast.

    Frame 0 has no predecessor and reuses the difference between frames 0
    and 1.
    """
    luma = np.asarray(video_frames)
    if luma.ndim != 3:
        raise DimensionError(f"expected (frames, height, width) luma, got shape {luma.shape}")
    if luma.shape[0] < 2:
        raise InputError("builtin saliency needs at least 2 frames")
    luma = luma.astype(np.float64)
    prior = center_prior(luma.shape[2], luma.shape[1])
    diffs = np.abs(np.diff(luma, axis=0))
    diffs = np.concatenate([diffs[:1], diffs], axis=0)
    out = np.empty(luma.shape, dtype=np.uint8)
    for i, d in enumerate(diffs):
        out[i] = _normalize_0_255(prior * (1.0 + d / 255.0))
    return FrameSaliencySequence(out)


def update_map(current: SaliencyMap, fixation: FixationMap, alpha: float = 0.5) -> SaliencyMap:
    """Blend ``alpha * current + (1 - alpha) * fixation``, rounding halves up."""
    if not 0.0 <= alpha <= 1.0:
        raise InputError(f"alpha must be in [0, 1], got {alpha}")
    if current.shape != fixation.shape:
        raise DimensionError(
            f"fixation map {fixation.width}x{fixation.height} does not match "
            f"saliency map {current.width}x{current.height}"
        )
    blend = alpha * current.values.astype(np.float64) + (1.0 - alpha) * fixation.values.astype(np.float64)
    # all terms are nonnegative, so half-up is half-away-from-zero
    out = np.floor(blend + 0.5)
    lo = np.minimum(current.values, fixation.values)
    hi = np.maximum(current.values, fixation.values)
    return SaliencyMap(np.clip(out, lo, hi))
