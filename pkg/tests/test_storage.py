import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vignette import metadata as md
from vignette.config import LibraryConfig
from vignette.encoder import Encoder
from vignette.errors import InputError, NotFoundError, PreconditionError, UpwardTranscodeError
from vignette.pgm import write_pgm
from vignette.storage import (
    Library,
    LibraryManifest,
    Policy,
    SegmentRecord,
    VideoRecord,
    apply_policies,
)
from vignette.synthetic import rect_saliency_maps, write_frame_video
from vignette.tiling import TileGrid


def maps(tmp_path, value, w=512, h=128, count=60, name="sal"):
    d = tmp_path / name
    d.mkdir(exist_ok=True)
    for i in range(count):
        write_pgm(d / f"{i:04d}.pgm", np.full((h, w), value, np.uint8))
    return d


def test_ingest_segments(library, clip_factory):
    rec = library.ingest(clip_factory(seconds=30))
    assert [s.duration_s for s in rec.segments] == [12, 12, 6]
    assert [s.size_bytes for s in rec.segments] == [3_000_000, 3_000_000, 1_500_000]
    assert rec.state == "baseline"
    assert library.get("clip") == rec
    with pytest.raises(InputError):
        library.ingest(clip_factory(seconds=30))


@pytest.mark.parametrize("seconds,expected", [(5, [5]), (12, [12])])
def test_ingest_short(library, clip_factory, seconds, expected):
    rec = library.ingest(clip_factory(name=f"c{seconds}", seconds=seconds))
    assert [s.duration_s for s in rec.segments] == expected


def test_transcode_mock_size(library, clip_factory):
    library.ingest(clip_factory(seconds=30))
    rec = library.transcode("clip", target_kbps=20000)
    assert rec.state == "baseline"
    assert [s.size_bytes for s in rec.segments] == [round(20000 * 1000 * d / 8 + 200) for d in (12, 12, 6)]
    with pytest.raises(NotFoundError):
        library.transcode("missing", target_kbps=100)


def test_vignette_transcode_zero_saliency(library, clip_factory, tmp_path):
    library.ingest(clip_factory(seconds=30))
    baseline = library.transcode("clip", target_kbps=20000).size_bytes
    rec = library.vignette_transcode("clip", 20000, saliency=str(maps(tmp_path, 0)))
    assert rec.state == "vignette"
    for s in rec.segments:
        assert set(s.bitrates_kbps) == {2000}
        meta = md.read_metadata(library.root / s.files[0])
        assert (meta.rows, meta.cols, list(meta.weights)) == (s.grid.rows, s.grid.cols, s.weights)
        assert library.segment_metadata("clip", s.index) == meta
        assert (library.root / s.saliency_map_path).exists()
    assert rec.size_bytes < baseline


def test_state_machine(library, clip_factory, tmp_path):
    library.ingest(clip_factory(seconds=30))
    fix = tmp_path / "fix.pgm"
    write_pgm(fix, np.full((128, 512), 255, np.uint8))
    with pytest.raises(PreconditionError):
        library.vignette_squeeze("clip", 100)
    with pytest.raises(PreconditionError):
        library.vignette_update("clip", fix)
    rec = library.vignette_transcode("clip", 20000)
    grids = [(s.grid, list(s.weights)) for s in rec.segments]
    with pytest.raises(UpwardTranscodeError, match="higher-quality"):
        library.vignette_squeeze("clip", 20000)
    sizes = [rec.size_bytes]
    for t in (5000, 1000):
        rec = library.vignette_squeeze("clip", t)
        assert [(s.grid, list(s.weights)) for s in rec.segments] == grids
        sizes.append(rec.size_bytes)
    assert sizes == sorted(sizes, reverse=True)
    with pytest.raises(UpwardTranscodeError):
        library.vignette_squeeze("clip", 5000)
    # a plain transcode drops back to baseline
    assert library.transcode("clip", target_kbps=800).state == "baseline"


def test_squeeze_to_100k_range(library, clip_factory):
    library.ingest(clip_factory(seconds=12))
    library.vignette_transcode("clip", 20000)
    rec = library.vignette_squeeze("clip", 100)
    for s in rec.segments:
        assert all(10 <= b <= 100 for b in s.bitrates_kbps)
        assert s.bitrates_kbps == [round(10 + w / 255 * 90) for w in s.weights]


def test_update_alpha_one_is_identity(library, clip_factory, tmp_path):
    library.ingest(clip_factory(seconds=12))
    before = library.vignette_transcode("clip", 4000)
    fix = tmp_path / "fix.pgm"
    write_pgm(fix, np.zeros((128, 512), np.uint8))
    after = library.vignette_update("clip", fix, alpha=1.0)
    assert [(s.weights, s.size_bytes) for s in after.segments] == [(s.weights, s.size_bytes) for s in before.segments]
    data = (library.root / after.segments[0].files[0]).read_bytes()
    assert md.extract_bytes(data) is not None


def test_update_full_fixation(library, clip_factory, tmp_path):
    library.ingest(clip_factory(seconds=12))
    library.vignette_transcode("clip", 4000, saliency=str(maps(tmp_path, 0)))
    fix = tmp_path / "fix.pgm"
    write_pgm(fix, np.full((128, 512), 255, np.uint8))
    rec = library.vignette_update("clip", fix, alpha=0.0)
    for s in rec.segments:
        assert set(s.weights) == {255} and set(s.bitrates_kbps) == {4000}
        assert md.read_metadata(library.root / s.files[0]).weights == tuple(s.weights)


def test_update_dimension_mismatch(library, clip_factory, tmp_path):
    library.ingest(clip_factory(seconds=12))
    library.vignette_transcode("clip", 4000)
    fix = tmp_path / "fix.pgm"
    write_pgm(fix, np.zeros((10, 10), np.uint8))
    with pytest.raises(InputError):
        library.vignette_update("clip", fix)


def test_exhaustive_invocations_1080p(tmp_path):
    luma = np.zeros((2, 1080, 1920), np.uint8)
    write_frame_video(tmp_path / "hd", luma, fps=1.0, bitrate_kbps=3000, motion=[])
    sal = rect_saliency_maps(tmp_path / "sal", 1920, 1080, 2, (0, 0, 300, 200))
    enc = Encoder()
    lib = Library(tmp_path / "lib", LibraryConfig(), encoder=enc)
    lib.ingest(tmp_path / "hd")
    lib.vignette_transcode("hd", mode="exhaustive", saliency=str(sal))
    assert enc.invocations == 49
    rec = lib.get("hd")
    assert rec.segments[0].search_mode == "exhaustive"
    enc.invocations = 0
    lib.vignette_transcode("hd", mode="heuristic", saliency=str(sal))
    # the final encode only; selection itself never encodes
    assert enc.invocations == 1


def test_concurrent_ingests(tmp_path, clip_factory):
    lib = Library(tmp_path / "lib", LibraryConfig())
    paths = [clip_factory(name=f"v{i}", seconds=5, seed=i) for i in range(4)]
    threads = [threading.Thread(target=lib.ingest, args=(p,)) for p in paths]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert sorted(v.id for v in lib.videos()) == ["v0", "v1", "v2", "v3"]


grid_st = st.builds(lambda r, c: TileGrid.uniform(64, 64, r, c), st.integers(1, 4), st.integers(1, 4))


@st.composite
def segment_records(draw, index):
    g = draw(st.one_of(st.none(), grid_st))
    n = g.num_tiles if g else 0
    weights = draw(st.lists(st.integers(0, 255), min_size=n, max_size=n)) if g else None
    return SegmentRecord(index, draw(st.floats(0.1, 20)), draw(st.one_of(st.none(), st.integers(10, 50000))),
                         draw(st.integers(0, 10**9)), draw(st.integers(0, 1000)), draw(st.integers(1, 500)),
                         g, weights, [100] * n if g else None, 0.1 if g else None,
                         "heuristic" if g else None, None, [f"x/seg_{index}.mp4"])


@st.composite
def manifests(draw):
    vids = []
    for i in range(draw(st.integers(0, 3))):
        segs = [draw(segment_records(k)) for k in range(draw(st.integers(1, 3)))]
        vids.append(VideoRecord(f"v{i}", f"/src/v{i}", segs, draw(st.integers(0, 10**6)),
                                draw(st.sampled_from(["baseline", "vignette"])), 64, 64,
                                draw(st.floats(1, 60)), draw(st.floats(0.1, 100)),
                                draw(st.one_of(st.none(), st.floats(1, 1e5)))))
    return LibraryManifest("/lib", vids)


@given(manifests())
@settings(max_examples=50)
def test_manifest_roundtrip(m):
    assert LibraryManifest.from_json(m.to_json()) == m


def _rec(vid, pop, state="baseline", size=1000, target=2000):
    seg = SegmentRecord(0, 12.0, target, size, 0, 24)
    return VideoRecord(vid, "/x", [seg], pop, state, 64, 64, 2.0, 12.0, 2000)


def test_policies():
    empty = LibraryManifest("/lib")
    pol = Policy("popularity_decay", 10, "vignette_squeeze", 500)
    assert apply_policies(empty, [pol]) == []
    m = LibraryManifest("/lib", [_rec("a", 5, "vignette")])
    acts = apply_policies(m, [pol])
    assert [(a.video_id, a.action, a.target_kbps) for a in acts] == [("a", "vignette_squeeze", 500)]
    cap = Policy("capacity_pressure", 10**9, "vignette_transcode")
    assert apply_policies(m, [cap]) == []


def test_policies_skip_ineligible_and_are_pure():
    m = LibraryManifest("/lib", [_rec("a", 1, "baseline"), _rec("b", 2, "vignette"),
                                 _rec("c", 3, "vignette", target=400)])
    before = m.to_json()
    pols = [Policy("capacity_pressure", 100, "vignette_transcode"),
            Policy("popularity_decay", 10, "vignette_squeeze", 500)]
    acts = apply_policies(m, pols)
    assert [(a.video_id, a.action) for a in acts] == [("a", "vignette_transcode"), ("b", "vignette_squeeze")]
    assert apply_policies(m, pols) == acts
    assert m.to_json() == before


def test_policy_validation():
    from vignette.errors import ConfigError
    with pytest.raises(ConfigError):
        Policy("popularity_decay", 10, "vignette_squeeze")
    with pytest.raises(ConfigError):
        Policy("whatever", 10, "vignette_transcode")


def test_execute_policy_actions(library, clip_factory):
    library.ingest(clip_factory(seconds=12), popularity=1)
    acts = apply_policies(library.load_manifest(), [Policy("popularity_decay", 5, "vignette_transcode")])
    rec = library.execute(acts[0])
    assert rec.state == "vignette"
    acts = apply_policies(library.load_manifest(), [Policy("popularity_decay", 5, "vignette_squeeze", 500)])
    assert library.execute(acts[0]).segments[0].target_kbps == 500


def test_block_matching_motion_is_cached(library, clip_factory):
    library.ingest(clip_factory(seconds=12))
    rec = library.vignette_transcode("clip", 4000)
    cache = library.root / "clip" / "seg_0.motion.csv"
    assert cache.exists()
    fresh = Library(library.root.parent / "other", LibraryConfig())
    fresh.ingest(rec.source_path)
    assert fresh.vignette_transcode("clip", 4000).size_bytes == rec.size_bytes


def _external_library(tmp_path, monkeypatch):
    import sys
    from pathlib import Path
    monkeypatch.delenv("VIGNETTE_ENCODER", raising=False)
    fake = Path(__file__).with_name("fake_codec.py")
    root = tmp_path / "xlib"
    root.mkdir()
    py = sys.executable
    (root / "vignette.toml").write_text(f"""
[encoder]
kind = "external"
command = "{py} {fake} enc {{input}} {{output}} {{bitrate_kbps}} {{crop_x}} {{crop_y}} {{crop_w}} {{crop_h}} {{duration_s}}"
decode_command = "{py} {fake} dec {{input}} {{output}}"
crf_command = "{py} {fake} crf {{input}} {{output}} {{crf}}"
workers = 2
""")
    from vignette.config import load_config
    return Library(root, load_config(root))


def test_external_backend_through_library(tmp_path, clip_factory, monkeypatch):
    lib = _external_library(tmp_path, monkeypatch)
    lib.ingest(clip_factory(seconds=14))
    rec = lib.vignette_transcode("clip", 3000, saliency=str(maps(tmp_path, 0, count=28)))
    for s in rec.segments:
        assert len(s.files) == s.grid.num_tiles
        assert s.size_bytes == sum((lib.root / f).stat().st_size for f in s.files)
        for f in s.files:
            meta = md.read_metadata(lib.root / f)
            assert list(meta.weights) == s.weights
    rec = lib.vignette_squeeze("clip", 1000)
    assert all(set(s.bitrates_kbps) == {100} for s in rec.segments)
    rec = lib.vignette_transcode("clip", 3000, mode="exhaustive", saliency=str(maps(tmp_path, 0, count=28)))
    assert all((lib.root / f).exists() for s in rec.segments for f in s.files)
    assert not list((lib.root / "clip").glob(".search_*"))


def test_crf_transcode(tmp_path, clip_factory, monkeypatch, library):
    lib = _external_library(tmp_path, monkeypatch)
    lib.ingest(clip_factory(seconds=5))
    rec = lib.transcode("clip", crf=23)
    assert rec.state == "baseline" and rec.segments[0].target_kbps is None
    data = (lib.root / rec.segments[0].files[0]).read_bytes()
    assert md.extract_bytes(data) is None
    library.ingest(clip_factory(name="m", seconds=5))
    from vignette.errors import ConfigError
    with pytest.raises(ConfigError):
        library.transcode("m", crf=23)
