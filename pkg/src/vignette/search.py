"""Tile-configuration selection: exhaustive encode-and-measure or the
motion-vector deviation heuristic."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from vignette import metrics
from vignette.errors import EncoderError, InputError
from vignette.motion import MotionField
from vignette.tiling import DEFAULT_FLOOR_FRAC, TileGrid, plan_quality

# scores closer than this are treated as ties
SCORE_TOL = 1e-9


@dataclass(frozen=True)
class CandidateResult:
    grid: TileGrid
    size_bytes: int | None = None
    psnr_db: float | None = None
    ewpsnr_db: float | None = None
    deviation: float | None = None

    def as_dict(self) -> dict:
        d = {"grid": self.grid.label, "tiles": self.grid.num_tiles}
        for key in ("size_bytes", "psnr_db", "ewpsnr_db", "deviation"):
            v = getattr(self, key)
            if v is not None:
                d[key] = v
        return d


@dataclass(frozen=True)
class SearchResult:
    chosen: TileGrid
    per_config: tuple[CandidateResult, ...]
    mode: str
    # label -> EncodedSegment for exhaustive runs, so the winner need not be re-encoded
    encodes: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if not self.per_config:
            raise InputError("search result needs at least one evaluated configuration")
        if self.chosen not in [c.grid for c in self.per_config]:
            raise InputError("chosen grid was not evaluated")

    def row_for(self, grid: TileGrid) -> CandidateResult:
        return next(c for c in self.per_config if c.grid == grid)


def _magnitudes_and_tiles(fields: Sequence[MotionField], grid: TileGrid):
    vecs = [f.entries for f in fields if len(f)]
    if not vecs:
        return np.empty(0), np.empty(0, dtype=np.int64)
    v = np.concatenate(vecs)
    return np.hypot(v[:, 2], v[:, 3]), grid.tile_index(v[:, 0], v[:, 1])


def motion_deviation(fields: Sequence[MotionField], grid: TileGrid) -> float:
    """Mean over tiles of the population stddev of MV magnitude in the tile.

    Vectors belong to the tile holding their block origin; tiles with fewer
    than two vectors contribute zero.
    """
    for f in fields:
        if (f.frame_w, f.frame_h) != (grid.width, grid.height):
            raise InputError(f"motion field {f.frame_w}x{f.frame_h} does not match grid "
                             f"{grid.width}x{grid.height}")
    mags, tiles = _magnitudes_and_tiles(fields, grid)
    n = grid.num_tiles
    if mags.size == 0:
        return 0.0
    count = np.bincount(tiles, minlength=n)
    mean = np.bincount(tiles, weights=mags, minlength=n) / np.maximum(count, 1)
    dev = mags - mean[tiles]
    var = np.bincount(tiles, weights=dev * dev, minlength=n) / np.maximum(count, 1)
    sigma = np.where(count >= 2, np.sqrt(var), 0.0)
    return float(sigma.sum() / n)


def _size_key(grid: TileGrid):
    return grid.num_tiles, grid.rows, grid.cols


def heuristic_search(fields: Sequence[MotionField], candidates: Sequence[TileGrid]) -> SearchResult:
    """Pick the grid with the smallest motion deviation; no encoding.

    Ties go to fewer tiles, then fewer rows, then fewer columns.
    """
    candidates = list(candidates)
    if not candidates:
        raise InputError("no candidate tile configurations")
    rows = tuple(CandidateResult(g, deviation=motion_deviation(fields, g)) for g in candidates)
    best = min(rows, key=lambda r: r.deviation)
    ties = [r for r in rows if r.deviation - best.deviation <= SCORE_TOL * max(1.0, best.deviation)]
    chosen = min(ties, key=lambda r: _size_key(r.grid)).grid
    return SearchResult(chosen, rows, "heuristic")


def evaluate_candidate(segment, saliency, grid: TileGrid, target_kbps: int, encoder,
                       floor_frac: float = DEFAULT_FLOOR_FRAC, out_dir=None):
    """Encode one candidate and score it; returns ``(row, encoded)``."""
    quality = plan_quality(saliency, grid, target_kbps, floor_frac)
    try:
        enc = encoder.transcode_tiled(segment, quality, out_dir=out_dir, measure=True)
    except EncoderError as exc:
        raise EncoderError(f"configuration {grid.label}: {exc}") from exc
    if enc.per_tile_psnr_db is None:
        raise EncoderError(f"configuration {grid.label}: encoder reported no quality measurement")
    psnr = metrics.frame_psnr_from_tiles(enc.per_tile_psnr_db, grid.area_fractions())
    ew = metrics.frame_ewpsnr_from_tiles(enc.per_tile_psnr_db, metrics.tile_saliency_mass(saliency, grid))
    return CandidateResult(grid, size_bytes=enc.total_size_bytes, psnr_db=psnr, ewpsnr_db=ew), enc


def exhaustive_search(segment, saliency, candidates: Sequence[TileGrid], target_kbps: int, encoder,
                      floor_frac: float = DEFAULT_FLOOR_FRAC, workers: int = 1,
                      out_dir=None) -> SearchResult:
    """Encode every candidate once; keep the best EWPSNR.

    Ties go to the smaller encode, then to fewer tiles.  Candidates may be
    evaluated in parallel; results are reduced in candidate order.
    """
    candidates = list(candidates)
    if not candidates:
        raise InputError("no candidate tile configurations")

    def run(grid):
        sub = Path(out_dir) / grid.label if out_dir is not None else None
        return evaluate_candidate(segment, saliency, grid, target_kbps, encoder, floor_frac, sub)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            done = list(pool.map(run, candidates))
    else:
        done = [run(g) for g in candidates]
    rows = tuple(r for r, _ in done)
    encodes = {r.grid.label: e for r, e in done}
    top = max(r.ewpsnr_db for r in rows)
    ties = [r for r in rows if top - r.ewpsnr_db <= SCORE_TOL * max(1.0, abs(top))]
    chosen = min(ties, key=lambda r: (r.size_bytes, r.grid.num_tiles)).grid
    return SearchResult(chosen, rows, "exhaustive", encodes)
