"""Tiled transcoding through an external encoder or a mock R-D model.

The external backend crops every tile out of the segment and encodes it
as an independent stream with a user-supplied command template.  The mock
backend replaces the encoder with a closed-form rate-distortion model so
that searches and the storage manager can be exercised hermetically.
"""

from __future__ import annotations

import math
import os
import shlex
import shutil
import string
import subprocess
import tempfile
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from vignette import metrics
from vignette.errors import ConfigError, DimensionError, EncoderError, InputError
from vignette.metadata import make_box
from vignette.tiling import TileGrid, TileQualityMap, uniform_quality
from vignette.video import Segment, write_y4m

ENCODER_ENV = "VIGNETTE_ENCODER"
DECODER_ENV = "VIGNETTE_DECODER"
REQUIRED_PLACEHOLDERS = ("input", "output", "bitrate_kbps", "crop_x", "crop_y", "crop_w", "crop_h", "duration_s")
OPTIONAL_PLACEHOLDERS = ("start_s",)
CRF_PLACEHOLDERS = ("input", "output", "crf")

# crop-and-encode with HEVC under a VBV cap (max bitrate mode)
DEFAULT_COMMAND = (
    "ffmpeg -v error -y -ss {start_s} -t {duration_s} -i {input} "
    "-vf crop={crop_w}:{crop_h}:{crop_x}:{crop_y} -an -c:v libx265 "
    "-b:v {bitrate_kbps}k -maxrate {bitrate_kbps}k -bufsize {bitrate_kbps}k -tag:v hvc1 {output}"
)
DEFAULT_DECODE_COMMAND = "ffmpeg -v error -y -i {input} -f rawvideo -pix_fmt gray {output}"


@dataclass(frozen=True)
class MockRDParams:
    header_bytes_per_tile: float = 200.0
    boundary_cost_bytes: float = 8.0
    psnr_base: float = 30.0
    psnr_slope: float = 3.0
    ref_rate_kbps: float = 250.0
    psnr_min: float = 20.0
    psnr_max: float = 50.0
    # complexity gained by a tile whose every vector references content outside it
    crossing_complexity: float = 3.0

    def __post_init__(self):
        for name in ("header_bytes_per_tile", "boundary_cost_bytes", "psnr_base", "psnr_slope",
                     "ref_rate_kbps", "psnr_min", "psnr_max"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"mock parameter {name} must be positive")
        if self.crossing_complexity < 0:
            raise ConfigError("mock parameter crossing_complexity must be >= 0")
        if self.psnr_min >= self.psnr_max:
            raise ConfigError("mock PSNR clamp needs low < high")


@dataclass(frozen=True)
class EncoderProfile:
    kind: str = "mock"
    command_template: str | None = None
    worker_limit: int = 1
    mock_params: MockRDParams = field(default_factory=MockRDParams)
    decode_template: str | None = None
    crf_template: str | None = None

    def __post_init__(self):
        if self.kind not in ("mock", "external"):
            raise ConfigError(f"unknown encoder kind {self.kind!r}")
        if self.worker_limit < 1:
            raise ConfigError("worker_limit must be >= 1")
        if self.kind == "external":
            if not self.command_template:
                raise ConfigError("external encoder profile needs a command template")
            check_template(self.command_template)
            if self.crf_template:
                check_template(self.crf_template, CRF_PLACEHOLDERS)

    @classmethod
    def external(cls, command_template: str | None = None, worker_limit: int = 1, **kw) -> "EncoderProfile":
        template = os.environ.get(ENCODER_ENV) or command_template or DEFAULT_COMMAND
        decode = kw.pop("decode_template", None) or os.environ.get(DECODER_ENV) or DEFAULT_DECODE_COMMAND
        return cls("external", template, worker_limit, decode_template=decode, **kw)


def _placeholders(template: str) -> set[str]:
    return {name for _, name, _, _ in string.Formatter().parse(template) if name}


def check_template(template: str, required=REQUIRED_PLACEHOLDERS) -> None:
    try:
        names = _placeholders(template)
    except ValueError as exc:
        raise ConfigError(f"malformed encoder command template: {exc}") from None
    missing = [p for p in required if p not in names]
    if missing:
        raise ConfigError("encoder command template is missing " + ", ".join("{%s}" % m for m in missing))
    unknown = names - set(REQUIRED_PLACEHOLDERS) - set(OPTIONAL_PLACEHOLDERS) - {"crf"}
    if unknown:
        raise ConfigError("encoder command template has unknown placeholders " +
                          ", ".join("{%s}" % u for u in sorted(unknown)))


def expand_command(template: str, **values) -> list[str]:
    try:
        return [part.format(**values) for part in shlex.split(template)]
    except (KeyError, IndexError) as exc:
        raise ConfigError(f"cannot expand encoder placeholder {exc}") from None


@dataclass
class EncodedSegment:
    tile_streams: list
    total_size_bytes: int
    per_tile_psnr_db: list[float] | None
    grid: TileGrid
    quality: TileQualityMap

    @property
    def frame_psnr_db(self) -> float | None:
        if self.per_tile_psnr_db is None:
            return None
        return metrics.frame_psnr_from_tiles(self.per_tile_psnr_db, self.grid.area_fractions())


# -- mock model ------------------------------------------------------------

def mock_tile_psnr(bitrate_kbps: float, complexity: float, params: MockRDParams) -> float:
    raw = params.psnr_base + params.psnr_slope * math.log2(bitrate_kbps / (params.ref_rate_kbps * complexity))
    return min(params.psnr_max, max(params.psnr_min, raw))


def mock_encode(quality: TileQualityMap, duration_s: float, complexity: Sequence[float] | None = None,
                crossings: int = 0, params: MockRDParams | None = None) -> tuple[float, list[float]]:
    """Size in bytes and per-tile PSNR under the mock R-D model.

    Each tile bitrate is a full-frame-equivalent rate, so a tile spends
    ``b * duration * area_fraction`` bits; every tile adds a fixed header
    and every boundary-crossing vector costs ``boundary_cost_bytes``.
    """
    params = params or MockRDParams()
    n = quality.grid.num_tiles
    complexity = [1.0] * n if complexity is None else [float(c) for c in complexity]
    if len(complexity) != n:
        raise InputError(f"need {n} complexity values, got {len(complexity)}")
    if any(c < 1 for c in complexity):
        raise InputError("tile complexity must be >= 1")
    if crossings < 0:
        raise InputError("crossings must be >= 0")
    areas = quality.grid.tile_areas()
    total_area = sum(areas)
    payload = math.fsum(b * 1000.0 * duration_s * a / total_area / 8.0
                        for b, a in zip(quality.bitrates_kbps, areas))
    size = payload + params.header_bytes_per_tile * n + params.boundary_cost_bytes * crossings
    psnrs = [mock_tile_psnr(b, c, params) for b, c in zip(quality.bitrates_kbps, complexity)]
    return size, psnrs


def _all_vectors(motion) -> np.ndarray:
    if not motion:
        return np.empty((0, 4), dtype=np.int64)
    return np.concatenate([f.entries for f in motion], axis=0)


def motion_crossings(motion, grid: TileGrid) -> tuple[int, list[float]]:
    """Vectors whose origin and displaced endpoint fall in different tiles.

    Returns the total count and, per tile, the fraction of the tile's
    vectors that leave it.  Endpoints are clamped to the frame.
    """
    vecs = _all_vectors(motion)
    n = grid.num_tiles
    if vecs.shape[0] == 0:
        return 0, [0.0] * n
    bx, by, dx, dy = vecs.T
    ex = np.clip(bx + dx, 0, grid.width - 1)
    ey = np.clip(by + dy, 0, grid.height - 1)
    src = grid.tile_index(bx, by)
    dst = grid.tile_index(ex, ey)
    crossing = src != dst
    total = np.bincount(src, minlength=n)
    out = np.bincount(src[crossing], minlength=n)
    frac = [float(o) / t if t else 0.0 for o, t in zip(out, total)]
    return int(crossing.sum()), frac


def mock_complexity(motion, grid: TileGrid, params: MockRDParams) -> tuple[int, list[float]]:
    crossings, frac = motion_crossings(motion, grid)
    return crossings, [1.0 + params.crossing_complexity * f for f in frac]


# -- backends --------------------------------------------------------------

class Encoder:
    """Runs tiled transcodes for a profile and counts segment encodes."""

    def __init__(self, profile: EncoderProfile | None = None, workdir=None):
        self.profile = profile or EncoderProfile()
        self.workdir = Path(workdir) if workdir is not None else None
        self._lock = threading.Lock()
        self.invocations = 0

    @property
    def measures_quality(self) -> bool:
        return self.profile.kind == "mock" or bool(self.profile.decode_template)

    def _count(self):
        with self._lock:
            self.invocations += 1

    def transcode_tiled(self, segment: Segment, quality: TileQualityMap, out_dir=None,
                        stem: str | None = None, measure: bool = False) -> EncodedSegment:
        if (quality.grid.width, quality.grid.height) != (segment.width, segment.height):
            raise DimensionError(f"{quality.grid.label} grid covers {quality.grid.width}x{quality.grid.height}, "
                                 f"segment is {segment.width}x{segment.height}")
        self._count()
        if self.profile.kind == "mock":
            return self._mock(segment, quality)
        return self._external(segment, quality, out_dir, stem or f"seg_{segment.index}", measure)

    def transcode_crf(self, segment: Segment, crf: int, out_dir, stem: str) -> EncodedSegment:
        """Whole-frame constant-quality encode (external backend only)."""
        if self.profile.kind != "external" or not self.profile.crf_template:
            raise ConfigError("CRF targets need an external encoder with a crf_command template")
        if segment.source is None:
            raise EncoderError(f"segment {segment.index} has no source to encode")
        self._count()
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        grid = TileGrid.uniform(segment.width, segment.height, 1, 1)
        out = out_dir / f"{stem}.t00.mp4"
        with tempfile.TemporaryDirectory(prefix="vignette-src-") as tmp:
            src, start = self._materialize(segment, tmp)
            cmd = expand_command(self.profile.crf_template, input=str(src), output=str(out), crf=int(crf),
                                 crop_x=0, crop_y=0, crop_w=segment.width, crop_h=segment.height,
                                 duration_s=f"{segment.duration_s:.6f}", start_s=f"{start:.6f}")
            self._run_job((0, cmd, out))
        # bitrate fields are placeholders for a rate-free encode
        quality = uniform_quality(grid, 10)
        return EncodedSegment([out], out.stat().st_size, None, grid, quality)

    @staticmethod
    def _materialize(segment, tmp):
        if segment.source.kind == "container":
            return segment.source.path, segment.start_s
        src = Path(tmp) / "segment.y4m"
        write_y4m(src, segment.luma(), segment.fps)
        return src, 0.0

    def _mock(self, segment, quality):
        params = self.profile.mock_params
        crossings, complexity = mock_complexity(segment.motion, quality.grid, params)
        size, psnrs = mock_encode(quality, segment.duration_s, complexity, crossings, params)
        areas = quality.grid.tile_areas()
        total_area = sum(areas)
        streams = [int(round(b * 1000.0 * segment.duration_s * a / total_area / 8.0
                             + params.header_bytes_per_tile))
                   for b, a in zip(quality.bitrates_kbps, areas)]
        return EncodedSegment(streams, int(round(size)), psnrs, quality.grid, quality)

    def _external(self, segment, quality, out_dir, stem, measure):
        if segment.source is None:
            raise EncoderError(f"segment {segment.index} has no source to encode")
        if shutil.which(shlex.split(self.profile.command_template)[0]) is None:
            raise EncoderError(f"encoder binary {shlex.split(self.profile.command_template)[0]!r} not found")
        out_dir = Path(out_dir or self.workdir or tempfile.mkdtemp(prefix="vignette-"))
        out_dir.mkdir(parents=True, exist_ok=True)
        with tempfile.TemporaryDirectory(prefix="vignette-src-") as tmp:
            src, start = self._materialize(segment, tmp)
            jobs = []
            for k, ((x, y, w, h), rate) in enumerate(zip(quality.grid.tile_rects(), quality.bitrates_kbps)):
                out = out_dir / f"{stem}.t{k:02d}.mp4"
                cmd = expand_command(self.profile.command_template, input=str(src), output=str(out),
                                     bitrate_kbps=rate, crop_x=x, crop_y=y, crop_w=w, crop_h=h,
                                     duration_s=f"{segment.duration_s:.6f}", start_s=f"{start:.6f}")
                jobs.append((k, cmd, out))
            with ThreadPoolExecutor(max_workers=self.profile.worker_limit) as pool:
                results = list(pool.map(self._run_job, jobs))
        paths = [p for _, p in results]
        size = sum(p.stat().st_size for p in paths)
        if size <= 0:
            raise EncoderError(f"segment {segment.index}: encoder produced empty output")
        psnrs = self._measure(segment, quality, paths) if measure else None
        return EncodedSegment(paths, size, psnrs, quality.grid, quality)

    @staticmethod
    def _run_job(job):
        k, cmd, out = job
        proc = subprocess.run(cmd, capture_output=True, text=True)
        if proc.returncode != 0:
            raise EncoderError(f"tile {k}: encoder exited {proc.returncode}: {proc.stderr.strip()[:300]}")
        if not out.exists():
            raise EncoderError(f"tile {k}: encoder did not write {out}")
        return k, out

    def _measure(self, segment, quality, paths):
        if not self.profile.decode_template:
            raise EncoderError("measuring tile quality needs a decode command template")
        ref = segment.luma()
        psnrs = []
        with tempfile.TemporaryDirectory(prefix="vignette-dec-") as tmp:
            for k, ((x, y, w, h), path) in enumerate(zip(quality.grid.tile_rects(), paths)):
                raw = Path(tmp) / f"t{k}.gray"
                cmd = expand_command(self.profile.decode_template, input=str(path), output=str(raw))
                proc = subprocess.run(cmd, capture_output=True, text=True)
                if proc.returncode != 0:
                    raise EncoderError(f"tile {k}: decoder exited {proc.returncode}: {proc.stderr.strip()[:300]}")
                data = np.fromfile(raw, dtype=np.uint8)
                n = min(len(data) // (w * h), ref.shape[0])
                if n == 0:
                    raise EncoderError(f"tile {k}: decoder produced no frames")
                dec = data[:n * w * h].reshape(n, h, w)
                psnrs.append(metrics.psnr(zip(ref[:n, y:y + h, x:x + w], dec)))
        return psnrs


def transcode_tiled(segment: Segment, quality: TileQualityMap, profile: EncoderProfile | None = None,
                    out_dir=None) -> EncodedSegment:
    return Encoder(profile).transcode_tiled(segment, quality, out_dir=out_dir)


def write_mock_container(path, encoded: EncodedSegment, duration_s: float) -> Path:
    """A small ISO-BMFF stand-in for a mock-encoded segment.

    ``ftyp`` + ``moov/mvhd`` + an ``mdat`` holding one 16-byte descriptor per
    tile (index, kbps, modelled bytes).  The file is not playable video; the
    modelled size lives in the manifest.
    """
    ftyp = make_box(b"ftyp", b"isom" + (512).to_bytes(4, "big") + b"isomiso2hvc1mp41")
    dur = int(round(duration_s * 1000))
    mvhd = make_box(b"mvhd", bytes(4) + bytes(8) + (1000).to_bytes(4, "big") + dur.to_bytes(4, "big")
                    + (0x00010000).to_bytes(4, "big") + (0x0100).to_bytes(2, "big") + bytes(10)
                    + _UNITY_MATRIX + bytes(24) + (2).to_bytes(4, "big"))
    moov = make_box(b"moov", mvhd)
    body = b"".join(k.to_bytes(4, "big") + int(rate).to_bytes(4, "big") + int(n).to_bytes(8, "big")
                    for k, (rate, n) in enumerate(zip(encoded.quality.bitrates_kbps, encoded.tile_streams)))
    mdat = make_box(b"mdat", body)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(ftyp + moov + mdat)
    os.replace(tmp, path)
    return path


_UNITY_MATRIX = b"".join(v.to_bytes(4, "big") for v in (0x00010000, 0, 0, 0, 0x00010000, 0, 0, 0, 0x40000000))
