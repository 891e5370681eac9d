"""Uniform tile grids and the saliency-to-bitrate mapping."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from vignette.errors import DimensionError, InputError

DEFAULT_FLOOR_FRAC = 0.10


@dataclass(frozen=True)
class SearchLimits:
    min_rows: int = 2
    max_rows: int = 10
    min_cols: int = 2
    max_cols: int = 10
    max_tiles: int = 50
    min_tile_width: int = 256
    min_tile_height: int = 64

    def __post_init__(self):
        for name in ("min_rows", "max_rows", "min_cols", "max_cols", "max_tiles",
                     "min_tile_width", "min_tile_height"):
            if getattr(self, name) < 1:
                raise InputError(f"search limit {name} must be >= 1")
        if self.min_rows > self.max_rows or self.min_cols > self.max_cols:
            raise InputError("search limits have min > max")


def split_even(length: int, parts: int) -> tuple[int, ...]:
    """Boundary offsets for ``parts`` near-equal spans of ``length`` pixels.

    Floor-uniform split, remainder spread over the leading spans, then every
    interior boundary rounded down to an even offset.
    """
    base, rem = divmod(length, parts)
    bounds = [0]
    for i in range(parts):
        bounds.append(bounds[-1] + base + (1 if i < rem else 0))
    return tuple([0] + [b - (b % 2) for b in bounds[1:-1]] + [length])


@dataclass(frozen=True)
class TileGrid:
    rows: int
    cols: int
    row_boundaries: tuple[int, ...]
    col_boundaries: tuple[int, ...]
    fallback: bool = field(default=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "row_boundaries", tuple(int(b) for b in self.row_boundaries))
        object.__setattr__(self, "col_boundaries", tuple(int(b) for b in self.col_boundaries))
        if self.rows < 1 or self.cols < 1:
            raise InputError("a grid needs at least one row and one column")
        for name, bounds, n in (("row", self.row_boundaries, self.rows),
                                ("col", self.col_boundaries, self.cols)):
            if len(bounds) != n + 1:
                raise InputError(f"{name} boundaries need {n + 1} entries, got {len(bounds)}")
            if bounds[0] != 0 or any(b >= c for b, c in zip(bounds, bounds[1:])):
                raise InputError(f"{name} boundaries must start at 0 and increase strictly: {bounds}")
            if any(b % 2 for b in bounds):
                raise InputError(f"{name} boundaries must be even offsets: {bounds}")

    @classmethod
    def uniform(cls, width: int, height: int, rows: int, cols: int, fallback: bool = False) -> "TileGrid":
        return cls(rows, cols, split_even(height, rows), split_even(width, cols), fallback)

    @property
    def width(self) -> int:
        return self.col_boundaries[-1]

    @property
    def height(self) -> int:
        return self.row_boundaries[-1]

    @property
    def num_tiles(self) -> int:
        return self.rows * self.cols

    @property
    def label(self) -> str:
        return f"{self.rows}x{self.cols}"

    def tile_rects(self) -> list[tuple[int, int, int, int]]:
        """Row-major ``(x, y, w, h)`` rectangles."""
        rects = []
        for r in range(self.rows):
            y0, y1 = self.row_boundaries[r], self.row_boundaries[r + 1]
            for c in range(self.cols):
                x0, x1 = self.col_boundaries[c], self.col_boundaries[c + 1]
                rects.append((x0, y0, x1 - x0, y1 - y0))
        return rects

    def tile_areas(self) -> list[int]:
        return [w * h for _, _, w, h in self.tile_rects()]

    def area_fractions(self) -> list[float]:
        total = self.width * self.height
        return [a / total for a in self.tile_areas()]

    def tile_index(self, x, y):
        """Row-major tile index of pixel(s) ``(x, y)``; works on arrays."""
        r = np.searchsorted(self.row_boundaries, y, side="right") - 1
        c = np.searchsorted(self.col_boundaries, x, side="right") - 1
        return r * self.cols + c

    def to_dict(self) -> dict:
        return {
            "rows": self.rows,
            "cols": self.cols,
            "row_boundaries": list(self.row_boundaries),
            "col_boundaries": list(self.col_boundaries),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TileGrid":
        return cls(d["rows"], d["cols"], tuple(d["row_boundaries"]), tuple(d["col_boundaries"]))


def _grid_fits(grid: TileGrid, limits: SearchLimits) -> bool:
    return all(w >= limits.min_tile_width and h >= limits.min_tile_height
               for _, _, w, h in grid.tile_rects())


def enumerate_configs(frame_w: int, frame_h: int, limits: SearchLimits | None = None) -> list[TileGrid]:
    """All legal grids, rows ascending then cols ascending.

    When nothing satisfies the limits the single 1x1 grid is returned with
    ``fallback=True``.
    """
    limits = limits or SearchLimits()
    if frame_w <= 0 or frame_h <= 0 or frame_w % 2 or frame_h % 2:
        raise DimensionError(f"frame dimensions must be positive and even, got {frame_w}x{frame_h}")
    grids = []
    for rows in range(limits.min_rows, limits.max_rows + 1):
        if rows > frame_h // 2:
            break
        for cols in range(limits.min_cols, limits.max_cols + 1):
            if cols > frame_w // 2 or rows * cols > limits.max_tiles:
                break
            grid = TileGrid.uniform(frame_w, frame_h, rows, cols)
            if _grid_fits(grid, limits):
                grids.append(grid)
    if not grids:
        return [TileGrid.uniform(frame_w, frame_h, 1, 1, fallback=True)]
    return grids


def tile_weights(saliency, grid: TileGrid) -> list[int]:
    """Per-tile maximum saliency, row-major."""
    values = getattr(saliency, "values", saliency)
    values = np.asarray(values)
    if values.shape != (grid.height, grid.width):
        raise DimensionError(
            f"saliency map {values.shape[1]}x{values.shape[0]} does not match "
            f"grid frame {grid.width}x{grid.height}"
        )
    return [int(values[y:y + h, x:x + w].max()) for x, y, w, h in grid.tile_rects()]


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def floor_kbps(target_kbps: int, floor_frac: float) -> int:
    # a positive floor keeps every bitrate a positive integer
    return max(1, _round_half_up(floor_frac * target_kbps))


def bitrate_for_weight(weight: int, target_kbps: int, floor: int) -> int:
    # exact integer evaluation of round(floor + weight/255 * (target - floor))
    num = floor * 255 + weight * (target_kbps - floor)
    return (2 * num + 255) // 510


@dataclass(frozen=True)
class TileQualityMap:
    grid: TileGrid
    weights: tuple[int, ...]
    bitrates_kbps: tuple[int, ...]
    target_kbps: int
    floor_frac: float = DEFAULT_FLOOR_FRAC

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(int(w) for w in self.weights))
        object.__setattr__(self, "bitrates_kbps", tuple(int(b) for b in self.bitrates_kbps))
        n = self.grid.num_tiles
        if len(self.weights) != n or len(self.bitrates_kbps) != n:
            raise InputError(f"{self.grid.label} grid needs {n} weights and bitrates")
        if any(not 0 <= w <= 255 for w in self.weights):
            raise InputError("tile weights must lie in [0, 255]")
        if any(b <= 0 for b in self.bitrates_kbps):
            raise InputError("tile bitrates must be positive")

    @property
    def floor_kbps(self) -> int:
        return floor_kbps(self.target_kbps, self.floor_frac)


def _check_rate_args(target_kbps, floor_frac):
    if isinstance(target_kbps, bool) or int(target_kbps) != target_kbps or target_kbps < 10:
        raise InputError(f"target bitrate must be an integer >= 10 kbps, got {target_kbps}")
    if not 0.0 < floor_frac <= 1.0:
        raise InputError(f"floor fraction must be in (0, 1], got {floor_frac}")


def map_bitrates(weights: Sequence[int], target_kbps: int, floor_frac: float = DEFAULT_FLOOR_FRAC,
                 grid: TileGrid | None = None) -> TileQualityMap:
    """Linear map from tile saliency (0-255) to integer kbps in [floor, target].

    ``grid`` defaults to a single row of tiles only when the caller has no
    geometry (pure rate computations); real callers pass the grid the weights
    came from.
    """
    _check_rate_args(target_kbps, floor_frac)
    target_kbps = int(target_kbps)
    weights = [int(w) for w in weights]
    if any(not 0 <= w <= 255 for w in weights):
        raise InputError("tile weights must lie in [0, 255]")
    floor = floor_kbps(target_kbps, floor_frac)
    rates = [bitrate_for_weight(w, target_kbps, floor) for w in weights]
    if grid is None:
        n = len(weights)
        grid = TileGrid(1, n, (0, 2), tuple(range(0, 2 * n + 1, 2)))
    return TileQualityMap(grid, tuple(weights), tuple(rates), target_kbps, floor_frac)


def plan_quality(saliency, grid: TileGrid, target_kbps: int,
                 floor_frac: float = DEFAULT_FLOOR_FRAC) -> TileQualityMap:
    return map_bitrates(tile_weights(saliency, grid), target_kbps, floor_frac, grid=grid)


def uniform_quality(grid: TileGrid, target_kbps: int) -> TileQualityMap:
    """Every tile at the full target (weights 255); the conventional baseline."""
    return map_bitrates([255] * grid.num_tiles, target_kbps, DEFAULT_FLOOR_FRAC, grid=grid)
