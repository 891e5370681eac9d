import math
import sys
from pathlib import Path

import numpy as np
import pytest

from vignette.encoder import (
    Encoder,
    EncoderProfile,
    MockRDParams,
    check_template,
    mock_encode,
    mock_tile_psnr,
    motion_crossings,
    transcode_tiled,
)
from vignette.errors import ConfigError, DimensionError, EncoderError
from vignette.metadata import parse_boxes
from vignette.motion import MotionField
from vignette.tiling import TileGrid, map_bitrates, uniform_quality
from vignette.video import FrameDirVideo, segment_video
from vignette.synthetic import write_frame_video

FAKE = Path(__file__).with_name("fake_codec.py")
ENC = f"{sys.executable} {FAKE} enc {{input}} {{output}} {{bitrate_kbps}} {{crop_x}} {{crop_y}} {{crop_w}} {{crop_h}} {{duration_s}}"
DEC = f"{sys.executable} {FAKE} dec {{input}} {{output}}"


def seg(w=64, h=32, dur=10.0, motion=None):
    from vignette.video import Segment
    return Segment(0, w, h, dur, motion=motion)


def test_mock_size_one_tile():
    g = TileGrid.uniform(64, 32, 1, 1)
    size, psnrs = mock_encode(uniform_quality(g, 1000), 10.0)
    assert size == 1_250_200
    assert psnrs == [mock_tile_psnr(1000, 1.0, MockRDParams())]


def test_mock_size_two_by_two():
    g = TileGrid.uniform(64, 32, 2, 2)
    size, _ = mock_encode(uniform_quality(g, 1000), 10.0)
    assert size == 1_250_800


def test_mock_psnr_examples():
    p = MockRDParams()
    assert mock_tile_psnr(2000, 1.0, p) == pytest.approx(30 + 3 * math.log2(8))
    assert mock_tile_psnr(2000, 1.0, p) == pytest.approx(39.0)
    assert mock_tile_psnr(250 * 2.5, 2.5, p) == pytest.approx(30.0)
    assert mock_tile_psnr(1, 50, p) == 20.0
    assert mock_tile_psnr(10**9, 1, p) == 50.0


def test_crossings_cost_boundary_bytes():
    g = TileGrid.uniform(64, 32, 1, 1)
    q = uniform_quality(g, 1000)
    a, _ = mock_encode(q, 10.0, crossings=0)
    b, _ = mock_encode(q, 10.0, crossings=2)
    assert b - a == 16


def test_motion_crossings_counts_and_fractions():
    g = TileGrid.uniform(64, 32, 1, 2)
    f = MotionField(0, np.array([[16, 0, 20, 0], [16, 16, 0, 0], [40, 0, -30, 0], [60, 0, 100, 0]]), 64, 32)
    n, frac = motion_crossings([f], g)
    # first and third cross; the fourth is clamped to the frame and stays put
    assert n == 2
    assert frac == [0.5, 0.5]


def test_mock_monotone_in_rate_tiles_and_crossings():
    g = TileGrid.uniform(64, 32, 1, 2)
    lo, _ = mock_encode(map_bitrates([0, 255], 1000, grid=g), 5.0)
    hi, _ = mock_encode(map_bitrates([10, 255], 1000, grid=g), 5.0)
    assert hi > lo
    one, _ = mock_encode(uniform_quality(TileGrid.uniform(64, 32, 1, 1), 1000), 5.0)
    two, _ = mock_encode(uniform_quality(g, 1000), 5.0)
    assert two > one
    p = MockRDParams()
    assert mock_tile_psnr(500, 1, p) <= mock_tile_psnr(600, 1, p)
    assert mock_tile_psnr(500, 2, p) <= mock_tile_psnr(500, 1, p)


def test_mock_transcode_is_deterministic():
    g = TileGrid.uniform(64, 32, 2, 2)
    motion = [MotionField(0, np.array([[0, 0, 40, 0], [48, 16, 1, 1]]), 64, 32)]
    q = map_bitrates([255, 10, 0, 90], 3000, grid=g)
    a = transcode_tiled(seg(motion=motion), q)
    b = Encoder(EncoderProfile(worker_limit=8)).transcode_tiled(seg(motion=motion), q)
    assert (a.total_size_bytes, a.per_tile_psnr_db) == (b.total_size_bytes, b.per_tile_psnr_db)


def test_grid_must_match_segment():
    q = uniform_quality(TileGrid.uniform(64, 64, 1, 1), 1000)
    with pytest.raises(DimensionError):
        Encoder().transcode_tiled(seg(64, 32), q)


def test_missing_bitrate_placeholder_rejected(monkeypatch):
    calls = []
    monkeypatch.setattr("subprocess.run", lambda *a, **k: calls.append(a))
    bad = ENC.replace(" {bitrate_kbps}", "")
    with pytest.raises(ConfigError, match="bitrate_kbps"):
        EncoderProfile("external", bad)
    assert calls == []
    with pytest.raises(ConfigError):
        check_template("enc {input} {output} {nonsense}")


def test_env_override(monkeypatch):
    monkeypatch.setenv("VIGNETTE_ENCODER", ENC)
    assert EncoderProfile.external("x {input}").command_template == ENC


def _frame_clip(tmp_path, w=64, h=32, n=4):
    rng = np.random.default_rng(5)
    luma = rng.integers(0, 256, (n, h, w), dtype=np.uint8)
    write_frame_video(tmp_path / "clip", luma, fps=2.0, bitrate_kbps=800)
    src = FrameDirVideo(tmp_path / "clip")
    return segment_video(src, 12.0)[0], luma


def test_external_backend_runs_one_job_per_tile(tmp_path):
    segment, luma = _frame_clip(tmp_path)
    enc = Encoder(EncoderProfile("external", ENC, worker_limit=3, decode_template=DEC))
    g = TileGrid.uniform(64, 32, 2, 2)
    q = map_bitrates([255, 0, 0, 128], 1000, grid=g)
    out = enc.transcode_tiled(segment, q, out_dir=tmp_path / "out", stem="s0", measure=True)
    assert enc.invocations == 1
    assert [p.name for p in out.tile_streams] == [f"s0.t{k:02d}.mp4" for k in range(4)]
    for p, rate, (x, y, w, h) in zip(out.tile_streams, q.bitrates_kbps, g.tile_rects()):
        data = p.read_bytes()
        mdat = [b for b in parse_boxes(data) if b.type == b"mdat"][0]
        body = data[mdat.offset + mdat.header_size:mdat.end]
        assert int.from_bytes(body[:8], "big") == rate
        assert body[8:] == np.ascontiguousarray(luma[:, y:y + h, x:x + w]).tobytes()
    assert out.total_size_bytes == sum(p.stat().st_size for p in out.tile_streams)
    assert out.per_tile_psnr_db == [100.0] * 4


def test_external_failure_is_reported(tmp_path):
    segment, _ = _frame_clip(tmp_path)
    fail = ENC.replace(" enc ", " fail ")
    enc = Encoder(EncoderProfile("external", fail))
    with pytest.raises(EncoderError, match="synthetic failure"):
        enc.transcode_tiled(segment, uniform_quality(TileGrid.uniform(64, 32, 1, 1), 500), out_dir=tmp_path)


def test_missing_binary(tmp_path):
    segment, _ = _frame_clip(tmp_path)
    enc = Encoder(EncoderProfile("external", "no-such-encoder-xyz " + ENC.split(" ", 1)[1]))
    with pytest.raises(EncoderError, match="not found"):
        enc.transcode_tiled(segment, uniform_quality(TileGrid.uniform(64, 32, 1, 1), 500), out_dir=tmp_path)


def test_crf_needs_external_template(tmp_path):
    segment, _ = _frame_clip(tmp_path)
    with pytest.raises(ConfigError):
        Encoder().transcode_crf(segment, 23, tmp_path, "s")
