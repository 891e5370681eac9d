"""Synthetic segments and videos for hermetic runs of the pipeline."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from vignette.motion import MotionField, write_motion_dump
from vignette.pgm import write_pgm
from vignette.video import DESCRIPTOR, MOTION_SIDECAR, Segment


def blob_saliency(width, height, blobs) -> np.ndarray:
    """Max of Gaussian blobs ``(cx, cy, sigma, amplitude)`` as a uint8 map."""
    ys, xs = np.mgrid[0:height, 0:width]
    out = np.zeros((height, width))
    for cx, cy, s, a in blobs:
        out = np.maximum(out, a * np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2.0 * s * s)))
    return np.floor(out + 0.5).clip(0, 255).astype(np.uint8)


def two_cluster_motion(rng, width, height, frames=6, block=16, jitter=0.1):
    """Frame split by a random vertical or horizontal line into two regions,
    each moving with its own constant vector plus sparse +-1 jitter.

    Returns the fields and ``(vertical, split)`` describing the cut.
    """
    vertical = bool(rng.random() < 0.5)
    extent = width if vertical else height
    split = int(rng.integers(extent // 5, 4 * extent // 5))
    mv_a = rng.integers(-4, 5, 2)
    mv_b = rng.integers(-24, 25, 2)
    gx, gy = np.meshgrid(np.arange(0, width, block), np.arange(0, height, block))
    gx, gy = gx.ravel(), gy.ravel()
    in_b = (gx >= split) if vertical else (gy >= split)
    fields = []
    for f in range(frames):
        mv = np.where(in_b[:, None], mv_b, mv_a)
        mv = mv + rng.integers(-1, 2, mv.shape) * (rng.random(mv.shape) < jitter)
        fields.append(MotionField(f, np.column_stack([gx, gy, mv]), width, height))
    return fields, (vertical, split)


def random_trial(seed, width=1920, height=1080, duration_s=12.0):
    """One randomized search trial: a segment with two-cluster motion and a
    saliency map with one blob in the faster region plus up to two
    distractor blobs."""
    rng = np.random.default_rng(seed)
    fields, (vertical, split) = two_cluster_motion(rng, width, height)
    cx = rng.uniform(split, width) if vertical else rng.uniform(0, width)
    cy = rng.uniform(0, height) if vertical else rng.uniform(split, height)
    blobs = [(cx, cy, rng.uniform(100, 400), 255.0)]
    for _ in range(int(rng.integers(0, 3))):
        blobs.append((rng.uniform(0, width), rng.uniform(0, height), rng.uniform(50, 300), rng.uniform(40, 200)))
    saliency = blob_saliency(width, height, blobs)
    return Segment(0, width, height, duration_s, motion=fields), saliency


def write_frame_video(path, luma, fps, bitrate_kbps=None, keyframes=None, motion=None) -> Path:
    """Lay out a frame-directory video (``video.json`` + PGM frames)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    luma = np.asarray(luma, dtype=np.uint8)
    for i, frame in enumerate(luma):
        write_pgm(path / f"frame_{i:06d}.pgm", frame)
    desc = {"fps": fps, "width": int(luma.shape[2]), "height": int(luma.shape[1]), "num_frames": int(luma.shape[0])}
    if bitrate_kbps is not None:
        desc["bitrate_kbps"] = bitrate_kbps
    if keyframes is not None:
        desc["keyframes"] = list(keyframes)
    (path / DESCRIPTOR).write_text(json.dumps(desc, indent=2))
    if motion is not None:
        write_motion_dump(path / MOTION_SIDECAR, motion)
    return path


def moving_square_video(path, width=1024, height=256, fps=2.0, seconds=12.0, bitrate_kbps=2000,
                        square=64, step=(8, 0), seed=0) -> Path:
    """A textured background with a bright square sliding across it.

    The motion sidecar holds the exact vectors of 16x16 blocks covering the
    square, so the heuristic search has real clusters to work with.
    """
    rng = np.random.default_rng(seed)
    n = int(round(fps * seconds))
    bg = rng.integers(40, 90, (height, width)).astype(np.uint8)
    luma = np.repeat(bg[None], n, axis=0)
    y0 = (height - square) // 2
    fields = []
    for t in range(n):
        x0 = (width // 4 + t * step[0]) % (width - square)
        y = (y0 + t * step[1]) % (height - square)
        luma[t, y:y + square, x0:x0 + square] = 220
        rows = []
        if t:
            for by in range(y - y % 16, y + square, 16):
                for bx in range(x0 - x0 % 16, x0 + square, 16):
                    rows.append((bx, by, -step[0], -step[1]))
        fields.append(MotionField(t, np.array(rows, dtype=np.int64).reshape(-1, 4), width, height))
    return write_frame_video(path, luma, fps, bitrate_kbps=bitrate_kbps, motion=fields)


def rect_saliency_maps(path, width, height, count, rect) -> Path:
    """``count`` identical PGM maps, 255 inside ``rect = (x, y, w, h)`` and
    zero elsewhere."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    x, y, w, h = rect
    m = np.zeros((height, width), dtype=np.uint8)
    m[y:y + h, x:x + w] = 255
    for i in range(count):
        write_pgm(path / f"sal_{i:06d}.pgm", m)
    return path


def salient_region_video(path, width=1280, height=640, fps=2.0, seconds=12.0, bitrate_kbps=2000,
                         rect=(0, 0, 256, 320), block=16, seed=0) -> Path:
    """Static textured background with one churning region ``rect``.

    Only blocks inside the region carry (random, nonzero) motion, so the
    region is both the moving and the salient part of the picture.
    """
    rng = np.random.default_rng(seed)
    n = int(round(fps * seconds))
    x, y, w, h = rect
    bg = rng.integers(40, 90, (height, width)).astype(np.uint8)
    luma = np.repeat(bg[None], n, axis=0)
    luma[:, y:y + h, x:x + w] = rng.integers(120, 250, (n, h, w)).astype(np.uint8)
    gx, gy = np.meshgrid(np.arange(x, x + w, block), np.arange(y, y + h, block))
    gx, gy = gx.ravel(), gy.ravel()
    fields = [MotionField(0, np.empty((0, 4)), width, height)]
    for t in range(1, n):
        mv = rng.integers(-8, 9, (gx.size, 2))
        fields.append(MotionField(t, np.column_stack([gx, gy, mv]), width, height))
    return write_frame_video(path, luma, fps, bitrate_kbps=bitrate_kbps, motion=fields)
