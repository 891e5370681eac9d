"""Video sources and keyframe-aligned segmentation.

Three kinds of source are understood:

* a *frame directory*: ``video.json`` plus one PGM luma frame per picture
  (``frame_000000.pgm`` ...), optionally with a ``motion.csv`` MV dump;
* a YUV4MPEG2 (``.y4m``) file, of which only the luma plane is used;
* any other file, probed and decoded through ``ffprobe``/``ffmpeg``.

``video.json`` keys: ``fps`` (required), ``width``/``height`` (checked
against the frames), ``num_frames`` (default: count of frames on disk),
``bitrate_kbps`` (source bitrate, optional), ``keyframes`` (frame indices
where a segment may start; default every frame), ``frame_pattern``.
"""

from __future__ import annotations

import json
import shutil
import subprocess
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from vignette.errors import DimensionError, InputError
from vignette.motion import MotionField, parse_motion_dump, select_frames
from vignette.pgm import read_pgm

DESCRIPTOR = "video.json"
MOTION_SIDECAR = "motion.csv"
DEFAULT_FRAME_PATTERN = "frame_{:06d}.pgm"


class VideoSource:
    kind = "abstract"

    path: Path
    width: int
    height: int
    fps: float
    num_frames: int
    keyframes: tuple[int, ...]
    source_kbps: float | None

    @property
    def duration_s(self) -> float:
        return self.num_frames / self.fps

    def read_luma(self, start: int, stop: int) -> np.ndarray:
        raise NotImplementedError

    def motion_fields(self) -> list[MotionField] | None:
        """Motion vectors shipped alongside the source, if any."""
        return None

    def describe(self) -> dict:
        return {
            "kind": self.kind,
            "width": self.width,
            "height": self.height,
            "fps": self.fps,
            "num_frames": self.num_frames,
            "duration_s": self.duration_s,
            "source_kbps": self.source_kbps,
        }


class FrameDirVideo(VideoSource):
    kind = "frames"

    def __init__(self, path):
        self.path = Path(path)
        desc_path = self.path / DESCRIPTOR
        try:
            desc = json.loads(desc_path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read {desc_path}: {exc}") from exc
        try:
            self.fps = float(desc["fps"])
        except (KeyError, TypeError, ValueError):
            raise InputError(f"{desc_path}: missing or invalid 'fps'") from None
        if self.fps <= 0:
            raise InputError(f"{desc_path}: fps must be positive")
        self.pattern = desc.get("frame_pattern", DEFAULT_FRAME_PATTERN)
        if "num_frames" in desc:
            self.num_frames = int(desc["num_frames"])
        else:
            n = 0
            while (self.path / self.pattern.format(n)).exists():
                n += 1
            self.num_frames = n
        if self.num_frames > 0:
            first = read_pgm(self.path / self.pattern.format(0))
            self.height, self.width = first.shape
        else:
            self.width = int(desc.get("width", 0))
            self.height = int(desc.get("height", 0))
        for key, actual in (("width", self.width), ("height", self.height)):
            if key in desc and int(desc[key]) != actual:
                raise DimensionError(f"{desc_path}: {key}={desc[key]} but frames have {key} {actual}")
        kf = desc.get("keyframes")
        self.keyframes = tuple(range(self.num_frames)) if kf is None else tuple(sorted(int(k) for k in kf))
        br = desc.get("bitrate_kbps")
        self.source_kbps = float(br) if br is not None else None

    def read_luma(self, start, stop):
        frames = []
        for i in range(start, stop):
            img = read_pgm(self.path / self.pattern.format(i))
            if img.shape != (self.height, self.width):
                raise DimensionError(f"frame {i} is {img.shape[1]}x{img.shape[0]}, "
                                     f"expected {self.width}x{self.height}")
            frames.append(img)
        return np.stack(frames) if frames else np.empty((0, self.height, self.width), np.uint8)

    def motion_fields(self):
        p = self.path / MOTION_SIDECAR
        if not p.exists():
            return None
        return parse_motion_dump(p, self.width, self.height)


_Y4M_FRAME_FACTORS = {"420": Fraction(3, 2), "422": Fraction(2), "444": Fraction(3), "mono": Fraction(1)}


class Y4MVideo(VideoSource):
    kind = "y4m"

    def __init__(self, path):
        self.path = Path(path)
        try:
            with open(self.path, "rb") as fh:
                header = fh.readline()
        except OSError as exc:
            raise InputError(f"cannot read {self.path}: {exc}") from exc
        if not header.startswith(b"YUV4MPEG2"):
            raise InputError(f"{self.path}: not a YUV4MPEG2 stream")
        params = {tok[:1]: tok[1:] for tok in header.split()[1:]}
        try:
            self.width = int(params[b"W"])
            self.height = int(params[b"H"])
            num, den = params.get(b"F", b"25:1").split(b":")
            self.fps = int(num) / int(den)
        except (KeyError, ValueError):
            raise InputError(f"{self.path}: malformed Y4M header") from None
        cs = params.get(b"C", b"420").decode()
        key = "mono" if cs.startswith("mono") else cs[:3]
        if key not in _Y4M_FRAME_FACTORS:
            raise InputError(f"{self.path}: unsupported colorspace {cs}")
        self.frame_bytes = int(self.width * self.height * _Y4M_FRAME_FACTORS[key])
        self.header_len = len(header)
        self._offsets = self._index_frames()
        self.num_frames = len(self._offsets)
        self.keyframes = tuple(range(self.num_frames))
        self.source_kbps = None

    def _index_frames(self):
        offsets = []
        size = self.path.stat().st_size
        with open(self.path, "rb") as fh:
            pos = self.header_len
            while pos < size:
                fh.seek(pos)
                line = fh.readline()
                if not line.startswith(b"FRAME"):
                    raise InputError(f"{self.path}: bad frame marker at byte {pos}")
                data_at = pos + len(line)
                if data_at + self.frame_bytes > size:
                    raise InputError(f"{self.path}: truncated final frame")
                offsets.append(data_at)
                pos = data_at + self.frame_bytes
        return offsets

    def read_luma(self, start, stop):
        out = np.empty((stop - start, self.height, self.width), dtype=np.uint8)
        with open(self.path, "rb") as fh:
            for k, i in enumerate(range(start, stop)):
                fh.seek(self._offsets[i])
                buf = fh.read(self.width * self.height)
                out[k] = np.frombuffer(buf, dtype=np.uint8).reshape(self.height, self.width)
        return out


def write_y4m(path, luma, fps: float) -> None:
    """Write luma frames as a monochrome Y4M stream (encoder input)."""
    luma = np.asarray(luma, dtype=np.uint8)
    frac = Fraction(fps).limit_denominator(1001)
    with open(path, "wb") as fh:
        fh.write(b"YUV4MPEG2 W%d H%d F%d:%d Ip A1:1 Cmono\n"
                 % (luma.shape[2], luma.shape[1], frac.numerator, frac.denominator))
        for frame in luma:
            fh.write(b"FRAME\n")
            fh.write(np.ascontiguousarray(frame).tobytes())


class ProbedVideo(VideoSource):
    """A compressed file read through ffprobe / ffmpeg."""

    kind = "container"

    def __init__(self, path, ffprobe: str = "ffprobe", ffmpeg: str = "ffmpeg"):
        self.path = Path(path)
        self.ffmpeg = ffmpeg
        if not self.path.is_file():
            raise InputError(f"cannot read {self.path}")
        if shutil.which(ffprobe) is None:
            raise InputError(f"{self.path}: probing container files needs {ffprobe} on PATH")
        proc = subprocess.run(
            [ffprobe, "-v", "error", "-select_streams", "v:0", "-count_packets",
             "-show_entries", "stream=width,height,avg_frame_rate,nb_read_packets,bit_rate:format=bit_rate,duration",
             "-of", "json", str(self.path)],
            capture_output=True, text=True)
        if proc.returncode != 0:
            raise InputError(f"ffprobe failed on {self.path}: {proc.stderr.strip()[:300]}")
        info = json.loads(proc.stdout)
        try:
            st = info["streams"][0]
        except (KeyError, IndexError):
            raise InputError(f"{self.path}: no video stream") from None
        self.width, self.height = int(st["width"]), int(st["height"])
        self.fps = float(Fraction(st.get("avg_frame_rate", "0/1")))
        self.num_frames = int(st.get("nb_read_packets", 0))
        if self.fps <= 0 or self.num_frames <= 0:
            raise InputError(f"{self.path}: zero-duration or unknown frame rate")
        br = st.get("bit_rate") or info.get("format", {}).get("bit_rate")
        self.source_kbps = float(br) / 1000.0 if br else \
            self.path.stat().st_size * 8 / 1000.0 / self.duration_s
        self.keyframes = self._probe_keyframes(ffprobe)

    def _probe_keyframes(self, ffprobe):
        proc = subprocess.run(
            [ffprobe, "-v", "error", "-select_streams", "v:0", "-skip_frame", "nokey",
             "-show_entries", "frame=best_effort_timestamp_time", "-of", "csv=p=0", str(self.path)],
            capture_output=True, text=True)
        if proc.returncode != 0:
            return tuple(range(self.num_frames))
        kfs = set()
        for line in proc.stdout.split():
            try:
                kfs.add(int(round(float(line.strip(",")) * self.fps)))
            except ValueError:
                continue
        return tuple(sorted(k for k in kfs if 0 <= k < self.num_frames)) or (0,)

    def read_luma(self, start, stop):
        if shutil.which(self.ffmpeg) is None:
            raise InputError(f"decoding {self.path} needs {self.ffmpeg} on PATH")
        proc = subprocess.run(
            [self.ffmpeg, "-v", "error", "-ss", f"{start / self.fps:.6f}", "-i", str(self.path),
             "-frames:v", str(stop - start), "-f", "rawvideo", "-pix_fmt", "gray", "-"],
            capture_output=True)
        if proc.returncode != 0:
            raise InputError(f"ffmpeg failed decoding {self.path}: {proc.stderr.decode()[:300]}")
        n = len(proc.stdout) // (self.width * self.height)
        return np.frombuffer(proc.stdout[:n * self.width * self.height], np.uint8).reshape(
            n, self.height, self.width).copy()


def open_video(path) -> VideoSource:
    p = Path(path)
    if p.is_dir():
        return FrameDirVideo(p)
    if not p.exists():
        raise InputError(f"cannot read {p}: no such file or directory")
    if p.suffix.lower() == ".y4m":
        return Y4MVideo(p)
    return ProbedVideo(p)


@dataclass
class Segment:
    """A keyframe-aligned chunk of a video; the unit of saliency and tiling.

    ``source`` and ``motion`` are optional so that synthetic segments can be
    fed straight into the search and the mock encoder.
    """

    index: int
    width: int
    height: int
    duration_s: float
    start_frame: int = 0
    num_frames: int = 0
    fps: float = 0.0
    source: VideoSource | None = field(default=None, repr=False)
    motion: list[MotionField] | None = field(default=None, repr=False)

    @property
    def start_s(self) -> float:
        return self.start_frame / self.fps if self.fps else 0.0

    def luma(self) -> np.ndarray:
        if self.source is None:
            raise InputError(f"segment {self.index} has no pixel source")
        return self.source.read_luma(self.start_frame, self.start_frame + self.num_frames)


def split_points(num_frames: int, fps: float, keyframes, segment_len_s: float) -> list[tuple[int, int]]:
    """``(start_frame, num_frames)`` spans cut at the keyframes closest to
    each multiple of ``segment_len_s`` (earlier keyframe on ties)."""
    if segment_len_s < 1:
        raise InputError("segment length must be at least 1 s")
    if num_frames <= 0 or fps <= 0:
        raise InputError("zero-duration video")
    kfs = sorted({k for k in keyframes if 0 < k < num_frames})
    duration = num_frames / fps
    cuts = [0]
    k = 1
    while k * segment_len_s < duration - 1e-9:
        t = k * segment_len_s
        usable = [f for f in kfs if f > cuts[-1]]
        if usable:
            best = min(usable, key=lambda f: (abs(f / fps - t), f))
            if best not in cuts:
                cuts.append(best)
        k += 1
    cuts.append(num_frames)
    return [(a, b - a) for a, b in zip(cuts, cuts[1:])]


def segment_video(source: VideoSource, segment_len_s: float = 12.0) -> list[Segment]:
    spans = split_points(source.num_frames, source.fps, source.keyframes, segment_len_s)
    return [Segment(i, source.width, source.height, n / source.fps, start, n, source.fps, source)
            for i, (start, n) in enumerate(spans)]


def attach_motion(segments, fields) -> None:
    """Distribute whole-video motion fields over the segments."""
    for seg in segments:
        seg.motion = select_frames(fields, seg.start_frame, seg.start_frame + seg.num_frames)
