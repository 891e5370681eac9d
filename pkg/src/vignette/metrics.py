"""PSNR, eye-weighted PSNR and size statistics on 8-bit luma."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from vignette.errors import DimensionError, InputError
from vignette.pgm import read_pgm

PSNR_CAP_DB = 100.0
PEAK = 255.0


def _pairs(pairs) -> list[tuple[np.ndarray, np.ndarray]]:
    out = []
    for ref, proc in pairs:
        ref = np.asarray(ref)
        proc = np.asarray(proc)
        if ref.shape != proc.shape or ref.ndim != 2:
            raise DimensionError(f"frame pair shapes differ or are not 2-D: {ref.shape} vs {proc.shape}")
        if out and ref.shape != out[0][0].shape:
            raise DimensionError(f"frame {len(out)} is {ref.shape}, earlier frames are {out[0][0].shape}")
        out.append((ref, proc))
    if not out:
        raise InputError("need at least one frame pair")
    return out


def _to_db(mse: float) -> float:
    if mse <= 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(PEAK * PEAK / mse))


def psnr(pairs: Iterable) -> float:
    """PSNR with the MSE pooled over every pixel of every pair; 100 dB cap."""
    pairs = _pairs(pairs)
    sq = 0
    count = 0
    for ref, proc in pairs:
        e = ref.astype(np.int64) - proc.astype(np.int64)
        sq += int(np.sum(e * e))
        count += e.size
    return _to_db(sq / count)


def saliency_weights(saliency) -> np.ndarray:
    values = np.asarray(getattr(saliency, "values", saliency), dtype=np.float64)
    return np.maximum(values, 1.0) / PEAK


def ewpsnr(pairs: Iterable, saliency) -> float:
    """Eye-weighted PSNR: squared errors weighted by ``max(S, 1) / 255``."""
    pairs = _pairs(pairs)
    w = saliency_weights(saliency)
    if w.shape != pairs[0][0].shape:
        raise DimensionError(f"saliency map {w.shape} does not match frames {pairs[0][0].shape}")
    num = 0.0
    den = 0.0
    wsum = float(np.sum(w))
    for ref, proc in pairs:
        e = ref.astype(np.float64) - proc.astype(np.float64)
        num += float(np.sum(w * e * e))
        den += wsum
    return _to_db(num / den)


def bitrate_reduction(original_bytes: float, new_bytes: float) -> float:
    if original_bytes <= 0:
        raise InputError("original size must be positive")
    return 1.0 - new_bytes / original_bytes


def frame_psnr_from_tiles(per_tile_psnr_db: Sequence[float], area_fractions: Sequence[float]) -> float:
    """Whole-frame PSNR from per-tile PSNRs by area-weighted MSE averaging."""
    return _weighted_psnr(per_tile_psnr_db, area_fractions, normalized=True)


def frame_ewpsnr_from_tiles(per_tile_psnr_db: Sequence[float], tile_saliency_mass: Sequence[float]) -> float:
    """EWPSNR when each tile's error is spatially uniform.

    ``tile_saliency_mass`` is the sum of ``max(S, 1) / 255`` over the tile's
    pixels; see :func:`tile_saliency_mass`.
    """
    return _weighted_psnr(per_tile_psnr_db, tile_saliency_mass, normalized=False)


def _weighted_psnr(psnrs, weights, normalized):
    psnrs = list(psnrs)
    weights = [float(w) for w in weights]
    if len(psnrs) != len(weights) or not psnrs:
        raise InputError("per-tile PSNR and weight lists must be non-empty and equal length")
    total = math.fsum(weights)
    if normalized and abs(total - 1.0) > 1e-12:
        raise InputError(f"area fractions sum to {total!r}, expected 1")
    if len(set(psnrs)) == 1:
        return float(psnrs[0])
    ms = math.fsum(w * PEAK * PEAK * 10.0 ** (-p / 10.0) for p, w in zip(psnrs, weights))
    return _to_db(ms / total)


def tile_saliency_mass(saliency, grid) -> list[float]:
    w = saliency_weights(saliency)
    return [float(w[y:y + h, x:x + wd].sum()) for x, y, wd, h in grid.tile_rects()]


def load_frames(path) -> list[np.ndarray]:
    """A PGM file, or a directory of PGMs sorted by name."""
    p = Path(path)
    if p.is_dir():
        files = sorted(f for f in p.iterdir() if f.suffix.lower() == ".pgm")
        if not files:
            raise InputError(f"{p}: no .pgm frames")
        return [read_pgm(f) for f in files]
    return [read_pgm(p)]
