import numpy as np
import pytest

from vignette.config import LibraryConfig
from vignette.storage import Library
from vignette.synthetic import write_frame_video


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_clip(path, seconds, fps=2.0, width=512, height=128, bitrate_kbps=2000, seed=0):
    """Small frame-directory clip with a drifting bright bar."""
    r = np.random.default_rng(seed)
    n = int(round(seconds * fps))
    bg = r.integers(30, 90, (height, width)).astype(np.uint8)
    luma = np.repeat(bg[None], n, axis=0)
    for t in range(n):
        x = (16 * t) % (width - 32)
        luma[t, :, x:x + 32] = 230
    return write_frame_video(path, luma, fps, bitrate_kbps=bitrate_kbps)


@pytest.fixture
def clip_factory(tmp_path):
    def make(name="clip", seconds=30.0, **kw):
        return make_clip(tmp_path / name, seconds, **kw)
    return make


@pytest.fixture
def library(tmp_path):
    return Library(tmp_path / "lib", LibraryConfig())


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    def record(number, title, ok, detail=""):
        ACCEPTANCE_LINES.append(f"AC{number:<2} {'PASS' if ok else 'FAIL'}  {title}  {detail}".rstrip())
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s[2:4])):
            terminalreporter.write_line(line)
