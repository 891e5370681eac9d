"""Video library: segmentation, manifest persistence, policies and the
transcode / vignette_transcode / vignette_squeeze / vignette_update calls.

Layout under the library root::

    manifest.json
    vignette.toml                 (optional)
    <video_id>/seg_<i>.mp4        mock backend: one container per segment
    <video_id>/seg_<i>.tNN.mp4    external backend: one stream per tile
    <video_id>/seg_<i>.sal.pgm    aggregated saliency map
"""

from __future__ import annotations

import json
import logging
import os
import re
import shutil
import threading
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from filelock import FileLock

from vignette import metadata as md
from vignette.config import LibraryConfig, load_config
from vignette.encoder import EncodedSegment, Encoder, write_mock_container
from vignette.errors import (
    ConfigError,
    InputError,
    NotFoundError,
    PreconditionError,
    UpwardTranscodeError,
    VignetteError,
)
from vignette.motion import estimate_block_motion, parse_motion_dump, run_extractor, select_frames, write_motion_dump
from vignette.pgm import read_pgm, write_pgm
from vignette.saliency import FrameSaliencySequence, SaliencyMap, aggregate, generate_builtin, update_map
from vignette.search import SearchResult, exhaustive_search, heuristic_search
from vignette.tiling import TileGrid, enumerate_configs, map_bitrates, tile_weights, uniform_quality
from vignette.video import Segment, VideoSource, open_video, segment_video

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1
BASELINE = "baseline"
VIGNETTE = "vignette"
MODES = ("heuristic", "exhaustive")
_ID_RE = re.compile(r"[^A-Za-z0-9_.-]+")


@dataclass
class SegmentRecord:
    index: int
    duration_s: float
    target_kbps: int | None
    size_bytes: int
    start_frame: int = 0
    num_frames: int = 0
    grid: TileGrid | None = None
    weights: list[int] | None = None
    bitrates_kbps: list[int] | None = None
    floor_frac: float | None = None
    search_mode: str | None = None
    saliency_map_path: str | None = None
    files: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = self.grid.to_dict() if self.grid is not None else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SegmentRecord":
        d = dict(d)
        if d.get("grid") is not None:
            d["grid"] = TileGrid.from_dict(d["grid"])
        return cls(**d)


@dataclass
class VideoRecord:
    id: str
    source_path: str
    segments: list[SegmentRecord]
    popularity: int = 0
    state: str = BASELINE
    width: int = 0
    height: int = 0
    fps: float = 0.0
    duration_s: float = 0.0
    source_kbps: float | None = None

    @property
    def size_bytes(self) -> int:
        return sum(s.size_bytes for s in self.segments)

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "segments"}
        d["segments"] = [s.to_dict() for s in self.segments]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "VideoRecord":
        d = dict(d)
        d["segments"] = [SegmentRecord.from_dict(s) for s in d.get("segments", [])]
        return cls(**d)


@dataclass
class LibraryManifest:
    library_root: str
    videos: list[VideoRecord] = field(default_factory=list)

    def __post_init__(self):
        ids = [v.id for v in self.videos]
        if len(ids) != len(set(ids)):
            raise InputError("duplicate video ids in manifest")

    def get(self, video_id: str) -> VideoRecord:
        for v in self.videos:
            if v.id == video_id:
                return v
        raise NotFoundError(f"video {video_id!r} not found")

    def put(self, record: VideoRecord) -> None:
        for i, v in enumerate(self.videos):
            if v.id == record.id:
                self.videos[i] = record
                return
        self.videos.append(record)

    @property
    def total_size_bytes(self) -> int:
        return sum(v.size_bytes for v in self.videos)

    def to_json(self) -> str:
        doc = {
            "manifest_version": MANIFEST_VERSION,
            "library_root": self.library_root,
            "videos": [v.to_dict() for v in self.videos],
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "LibraryManifest":
        doc = json.loads(text)
        if doc.get("manifest_version") != MANIFEST_VERSION:
            raise InputError(f"unsupported manifest version {doc.get('manifest_version')!r}")
        return cls(doc["library_root"], [VideoRecord.from_dict(v) for v in doc.get("videos", [])])


# -- policies --------------------------------------------------------------

POLICY_KINDS = ("capacity_pressure", "popularity_decay")
POLICY_ACTIONS = ("vignette_transcode", "vignette_squeeze")


@dataclass(frozen=True)
class Policy:
    kind: str
    threshold: float
    action: str
    squeeze_target_kbps: int | None = None

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ConfigError(f"unknown policy kind {self.kind!r}")
        if self.action not in POLICY_ACTIONS:
            raise ConfigError(f"unknown policy action {self.action!r}")
        if not self.threshold > 0:
            raise ConfigError("policy threshold must be positive")
        if self.action == "vignette_squeeze" and not self.squeeze_target_kbps:
            raise ConfigError("squeeze policies need squeeze_target_kbps")

    @classmethod
    def from_dict(cls, d: dict) -> "Policy":
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad policy {d}: {exc}") from None


@dataclass(frozen=True)
class ScheduledAction:
    video_id: str
    action: str
    reason: str
    target_kbps: int | None = None


def _eligible(video: VideoRecord, policy: Policy) -> bool:
    if policy.action == "vignette_transcode":
        return video.state == BASELINE
    return video.state == VIGNETTE and all(
        s.target_kbps is None or s.target_kbps > policy.squeeze_target_kbps for s in video.segments)


def apply_policies(manifest: LibraryManifest, policies) -> list[ScheduledAction]:
    """Plan the actions the policies call for; nothing is executed.

    Videos that the action cannot apply to (already perceptual for
    ``vignette_transcode``; not perceptual, or already at or below the
    squeeze target, for ``vignette_squeeze``) are skipped.  A video gets at
    most one action per action kind.
    """
    actions: list[ScheduledAction] = []
    seen = set()
    by_popularity = sorted(manifest.videos, key=lambda v: (v.popularity, v.id))
    total = manifest.total_size_bytes
    for p in policies:
        if p.kind == "capacity_pressure":
            if total <= p.threshold:
                continue
            hits = [(v, f"library size {total} B > {p.threshold:g} B") for v in by_popularity]
        else:
            hits = [(v, f"popularity {v.popularity} < {p.threshold:g}")
                    for v in by_popularity if v.popularity < p.threshold]
        for v, why in hits:
            if (v.id, p.action) in seen or not _eligible(v, p):
                continue
            seen.add((v.id, p.action))
            actions.append(ScheduledAction(v.id, p.action, why, p.squeeze_target_kbps))
    return actions


# -- library ---------------------------------------------------------------

def _video_id_for(path: Path) -> str:
    stem = path.stem if path.is_file() else path.name
    return _ID_RE.sub("_", stem).strip("_") or "video"


class Library:
    """A directory-backed video library.

    API calls take an exclusive per-video claim (a lock file under
    ``.locks/``), so calls on distinct videos can run in parallel; manifest
    updates are serialized and written atomically.
    """

    def __init__(self, root, config: LibraryConfig | None = None, encoder: Encoder | None = None):
        self.root = Path(root).resolve()
        self.root.mkdir(parents=True, exist_ok=True)
        self.config = config or load_config(self.root)
        self.encoder = encoder or Encoder(self.config.profile)
        self._mlock = threading.Lock()
        self._file_mlock = FileLock(str(self.root / ".manifest.lock"))
        (self.root / ".locks").mkdir(exist_ok=True)

    # manifest plumbing

    @property
    def manifest_path(self) -> Path:
        return self.root / MANIFEST_NAME

    def load_manifest(self) -> LibraryManifest:
        if not self.manifest_path.exists():
            return LibraryManifest(str(self.root))
        return LibraryManifest.from_json(self.manifest_path.read_text())

    def _write_manifest(self, manifest: LibraryManifest) -> None:
        tmp = self.manifest_path.with_name(MANIFEST_NAME + ".tmp")
        tmp.write_text(manifest.to_json())
        os.replace(tmp, self.manifest_path)

    def _commit(self, record: VideoRecord, new: bool = False) -> None:
        with self._mlock, self._file_mlock:
            m = self.load_manifest()
            if new and any(v.id == record.id for v in m.videos):
                raise InputError(f"video id {record.id!r} already exists")
            m.put(record)
            self._write_manifest(m)

    @contextmanager
    def _claim(self, video_id: str):
        with FileLock(str(self.root / ".locks" / f"{video_id}.lock")):
            yield

    def get(self, video_id: str) -> VideoRecord:
        return self.load_manifest().get(video_id)

    def videos(self) -> list[VideoRecord]:
        return self.load_manifest().videos

    def set_popularity(self, video_id: str, popularity: int) -> VideoRecord:
        if popularity < 0:
            raise InputError("popularity must be >= 0")
        with self._claim(video_id):
            rec = self.get(video_id)
            rec.popularity = int(popularity)
            self._commit(rec)
        return rec

    # sources

    def _source(self, rec: VideoRecord) -> VideoSource:
        return open_video(rec.source_path)

    def _segments(self, rec: VideoRecord, src: VideoSource) -> list[Segment]:
        segs = []
        for s in rec.segments:
            segs.append(Segment(s.index, rec.width, rec.height, s.duration_s, s.start_frame,
                                s.num_frames, rec.fps, src))
        return segs

    def _motion(self, rec: VideoRecord, src: VideoSource, seg: Segment):
        fields = src.motion_fields()
        if fields is None and self.config.motion_extractor:
            out = self.root / rec.id / "motion.csv"
            out.parent.mkdir(parents=True, exist_ok=True)
            fields = run_extractor(self.config.motion_extractor, src.path, out, rec.width, rec.height)
        if fields is not None:
            return select_frames(fields, seg.start_frame, seg.start_frame + seg.num_frames)
        # block matching is the slow path; keep its result next to the outputs
        cache = self._video_dir(rec) / f"seg_{seg.index}.motion.csv"
        if cache.exists():
            return parse_motion_dump(cache, rec.width, rec.height)
        fields = estimate_block_motion(seg.luma())
        write_motion_dump(cache, fields)
        return fields

    def _video_dir(self, rec: VideoRecord) -> Path:
        d = self.root / rec.id
        d.mkdir(parents=True, exist_ok=True)
        return d

    # API

    def ingest(self, path, segment_len_s: float | None = None, video_id: str | None = None,
               bitrate_kbps: float | None = None, popularity: int = 0) -> VideoRecord:
        """Register a video, cutting it into keyframe-aligned segments."""
        seg_len = segment_len_s if segment_len_s is not None else self.config.segment_len_s
        src = open_video(path)
        if src.num_frames <= 0:
            raise InputError(f"{path}: zero-duration video")
        vid = _ID_RE.sub("_", video_id) if video_id else _video_id_for(Path(path))
        kbps = bitrate_kbps if bitrate_kbps is not None else src.source_kbps
        segments = []
        for seg in segment_video(src, seg_len):
            size = int(round(kbps * 1000.0 * seg.duration_s / 8.0)) if kbps else 0
            segments.append(SegmentRecord(seg.index, seg.duration_s, int(round(kbps)) if kbps else None,
                                          size, seg.start_frame, seg.num_frames))
        rec = VideoRecord(vid, str(Path(path).resolve()), segments, int(popularity), BASELINE,
                          src.width, src.height, src.fps, src.duration_s, kbps)
        self._commit(rec, new=True)
        log.info("ingested %s: %d segments", vid, len(segments))
        return rec

    def transcode(self, video_id: str, target_kbps: int | None = None, crf: int | None = None) -> VideoRecord:
        """Conventional single-quality transcode of every segment."""
        if (target_kbps is None) == (crf is None):
            raise InputError("give exactly one of a target bitrate or a CRF")
        if crf is not None:
            return self._transcode_crf(video_id, int(crf))
        with self._claim(video_id):
            rec = self.get(video_id)
            src = self._source(rec)
            vdir = self._video_dir(rec)
            for seg, srec in zip(self._segments(rec, src), rec.segments):
                grid = TileGrid.uniform(rec.width, rec.height, 1, 1)
                enc = self._encode(seg, uniform_quality(grid, int(target_kbps)), vdir, srec.index)
                self._store_output(srec, enc, vdir, payload=None)
                srec.target_kbps = int(target_kbps)
                srec.grid = srec.weights = srec.bitrates_kbps = srec.search_mode = None
                srec.floor_frac = None
            rec.state = BASELINE
            self._commit(rec)
        return rec

    def _transcode_crf(self, video_id, crf):
        with self._claim(video_id):
            rec = self.get(video_id)
            src = self._source(rec)
            vdir = self._video_dir(rec)
            for seg, srec in zip(self._segments(rec, src), rec.segments):
                enc = self.encoder.transcode_crf(seg, crf, vdir, f"seg_{srec.index}")
                self._store_output(srec, enc, vdir, payload=None)
                srec.target_kbps = None
                srec.grid = srec.weights = srec.bitrates_kbps = srec.search_mode = None
                srec.floor_frac = None
            rec.state = BASELINE
            self._commit(rec)
        return rec

    def vignette_transcode(self, video_id: str, target_kbps: int | None = None, mode: str = "heuristic",
                           saliency: str | None = None) -> VideoRecord:
        """Saliency-tiled transcode; writes metadata into every output."""
        if mode not in MODES:
            raise InputError(f"mode must be one of {MODES}, got {mode!r}")
        saliency = saliency or self.config.saliency
        with self._claim(video_id):
            rec = self.get(video_id)
            target = target_kbps if target_kbps is not None else rec.source_kbps
            if not target:
                raise PreconditionError(f"video {video_id!r} has no known source bitrate; pass a target")
            target = int(round(target))
            src = self._source(rec)
            vdir = self._video_dir(rec)
            for seg, srec in zip(self._segments(rec, src), rec.segments):
                try:
                    smap = self._segment_saliency(rec, seg, saliency)
                    map_path = vdir / f"seg_{srec.index}.sal.pgm"
                    write_pgm(map_path, smap.values)
                    srec.saliency_map_path = os.path.relpath(map_path, self.root)
                    self._perceptual_encode(rec, src, seg, srec, smap, target, mode, vdir)
                except VignetteError as exc:
                    raise type(exc)(f"segment {srec.index}: {exc}") from exc
            rec.state = VIGNETTE
            self._commit(rec)
        return rec

    def vignette_squeeze(self, video_id: str, target_kbps: int) -> VideoRecord:
        """Re-encode at a lower target with the stored grid and weights."""
        target_kbps = int(target_kbps)
        with self._claim(video_id):
            rec = self.get(video_id)
            if rec.state != VIGNETTE:
                raise PreconditionError(f"video {video_id!r} is not perceptually encoded; "
                                        "run vignette_transcode first")
            for s in rec.segments:
                if target_kbps >= s.target_kbps:
                    raise UpwardTranscodeError(
                        f"segment {s.index}: squeeze target {target_kbps} kbps is not below the current "
                        f"{s.target_kbps} kbps (squeeze never moves to a higher-quality mapping)")
            src = self._source(rec)
            vdir = self._video_dir(rec)
            for seg, srec in zip(self._segments(rec, src), rec.segments):
                quality = map_bitrates(srec.weights, target_kbps, srec.floor_frac, grid=srec.grid)
                if self.encoder.profile.kind == "mock":
                    seg.motion = self._motion(rec, src, seg)
                enc = self._encode(seg, quality, vdir, srec.index)
                payload = md.encode_metadata(md.PerceptualMetadata(srec.grid.rows, srec.grid.cols,
                                                                   tuple(srec.weights)))
                self._store_output(srec, enc, vdir, payload)
                srec.target_kbps = target_kbps
                srec.bitrates_kbps = list(quality.bitrates_kbps)
            self._commit(rec)
        return rec

    def vignette_update(self, video_id: str, fixation_path, alpha: float = 0.5) -> VideoRecord:
        """Blend a fixation map into each segment's saliency and redo the
        search, encode and metadata."""
        with self._claim(video_id):
            rec = self.get(video_id)
            if rec.state != VIGNETTE:
                raise PreconditionError(f"video {video_id!r} is not perceptually encoded; "
                                        "run vignette_transcode first")
            fixation = SaliencyMap(read_pgm(fixation_path))
            src = self._source(rec)
            vdir = self._video_dir(rec)
            for seg, srec in zip(self._segments(rec, src), rec.segments):
                if not srec.saliency_map_path or not (self.root / srec.saliency_map_path).exists():
                    raise PreconditionError(f"segment {srec.index}: saliency sidecar missing")
                current = SaliencyMap(read_pgm(self.root / srec.saliency_map_path))
                blended = update_map(current, fixation, alpha)
                write_pgm(self.root / srec.saliency_map_path, blended.values)
                self._perceptual_encode(rec, src, seg, srec, blended, srec.target_kbps,
                                        srec.search_mode or "heuristic", vdir)
            self._commit(rec)
        return rec

    def search(self, video_id: str, mode: str = "heuristic", saliency: str | None = None,
               target_kbps: int | None = None) -> list[SearchResult]:
        """Run the configuration search for every segment without storing."""
        if mode not in MODES:
            raise InputError(f"mode must be one of {MODES}, got {mode!r}")
        rec = self.get(video_id)
        src = self._source(rec)
        out = []
        for seg, srec in zip(self._segments(rec, src), rec.segments):
            cands = enumerate_configs(rec.width, rec.height, self.config.limits)
            seg.motion = self._motion(rec, src, seg)
            if mode == "heuristic":
                out.append(heuristic_search(seg.motion, cands))
            else:
                target = target_kbps or srec.target_kbps or rec.source_kbps
                if not target:
                    raise PreconditionError("exhaustive search needs a target bitrate")
                smap = self._segment_saliency(rec, seg, saliency or self.config.saliency)
                out.append(exhaustive_search(seg, smap, cands, int(target), self.encoder,
                                             self.config.floor_frac, self.encoder.profile.worker_limit,
                                             out_dir=self._scratch(rec, srec.index)))
                shutil.rmtree(self._scratch(rec, srec.index), ignore_errors=True)
        return out

    def execute(self, action: ScheduledAction) -> VideoRecord:
        if action.action == "vignette_transcode":
            return self.vignette_transcode(action.video_id)
        return self.vignette_squeeze(action.video_id, action.target_kbps)

    # internals

    def _scratch(self, rec, index) -> Path:
        return self.root / rec.id / f".search_{index}"

    def _segment_saliency(self, rec: VideoRecord, seg: Segment, saliency: str) -> SaliencyMap:
        if saliency == "builtin":
            return aggregate(generate_builtin(seg.luma()))
        d = Path(saliency)
        if not d.is_dir():
            raise InputError(f"saliency source {saliency!r} is neither 'builtin' nor a directory")
        files = sorted(f for f in d.iterdir() if f.suffix.lower() == ".pgm")
        stop = seg.start_frame + seg.num_frames
        if len(files) < stop:
            raise InputError(f"{d}: {len(files)} saliency maps for a video needing {stop}")
        frames = [read_pgm(f) for f in files[seg.start_frame:stop]]
        seq = FrameSaliencySequence(frames)
        if (seq.width, seq.height) != (rec.width, rec.height):
            raise InputError(f"saliency maps are {seq.width}x{seq.height}, video is {rec.width}x{rec.height}")
        return aggregate(seq)

    def _perceptual_encode(self, rec, src, seg, srec, smap, target, mode, vdir):
        cands = enumerate_configs(rec.width, rec.height, self.config.limits)
        floor_frac = self.config.floor_frac
        seg.motion = self._motion(rec, src, seg)
        if mode == "exhaustive":
            scratch = self._scratch(rec, srec.index)
            result = exhaustive_search(seg, smap, cands, target, self.encoder, floor_frac,
                                       self.encoder.profile.worker_limit, out_dir=scratch)
            enc = result.encodes[result.chosen.label]
            if self.encoder.profile.kind == "external":
                enc = self._adopt_tiles(enc, vdir, srec.index)
            shutil.rmtree(scratch, ignore_errors=True)
        else:
            result = heuristic_search(seg.motion, cands)
            weights = tile_weights(smap, result.chosen)
            quality = map_bitrates(weights, target, floor_frac, grid=result.chosen)
            enc = self._encode(seg, quality, vdir, srec.index)
        grid = result.chosen
        weights = list(enc.quality.weights)
        payload = md.encode_metadata(md.PerceptualMetadata(grid.rows, grid.cols, tuple(weights)))
        self._store_output(srec, enc, vdir, payload)
        srec.grid = grid
        srec.weights = weights
        srec.bitrates_kbps = list(enc.quality.bitrates_kbps)
        srec.target_kbps = int(target)
        srec.floor_frac = floor_frac
        srec.search_mode = mode

    def _encode(self, seg, quality, vdir, index) -> EncodedSegment:
        return self.encoder.transcode_tiled(seg, quality, out_dir=vdir, stem=f"seg_{index}")

    def _adopt_tiles(self, enc: EncodedSegment, vdir: Path, index: int) -> EncodedSegment:
        moved = []
        for k, p in enumerate(enc.tile_streams):
            dest = vdir / f"seg_{index}.t{k:02d}.mp4"
            os.replace(p, dest)
            moved.append(dest)
        return replace(enc, tile_streams=moved)

    def _store_output(self, srec: SegmentRecord, enc: EncodedSegment, vdir: Path, payload: bytes | None):
        """Write/collect segment files, (re)embed metadata, update size."""
        for old in srec.files:
            p = self.root / old
            keep = self.encoder.profile.kind == "external" and any(
                Path(t).resolve() == p.resolve() for t in enc.tile_streams)
            if p.exists() and not keep:
                p.unlink()
        if self.encoder.profile.kind == "mock":
            out = write_mock_container(vdir / f"seg_{srec.index}.mp4", enc, srec.duration_s)
            paths = [out]
        else:
            paths = [Path(p) for p in enc.tile_streams]
        for p in paths:
            if payload is not None:
                md.embed_in_container(p, payload)
        srec.files = [os.path.relpath(p, self.root) for p in paths]
        if self.encoder.profile.kind == "mock":
            # the container is a stand-in; the modelled size is the size
            srec.size_bytes = int(enc.total_size_bytes)
        else:
            srec.size_bytes = sum(p.stat().st_size for p in paths)

    def segment_metadata(self, video_id: str, index: int) -> md.PerceptualMetadata | None:
        rec = self.get(video_id)
        srec = rec.segments[index]
        if not srec.files:
            return None
        return md.read_metadata(self.root / srec.files[0])
