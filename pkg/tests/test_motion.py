import numpy as np
import pytest

from vignette.errors import InputError
from vignette.motion import (
    MotionField,
    estimate_block_motion,
    parse_motion_dump,
    select_frames,
    write_motion_dump,
)


def test_header_only_is_empty(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("frame,block_x,block_y,dx,dy\n")
    assert parse_motion_dump(p, 64, 64) == []


def test_three_rows_one_field(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("frame,block_x,block_y,dx,dy\n0,0,0,1,2\n0,16,0,-3,0\n0,32,16,0,0\n")
    fields = parse_motion_dump(p, 64, 64)
    assert len(fields) == 1
    assert fields[0].entries.shape == (3, 4)
    assert fields[0].entries[1].tolist() == [16, 0, -3, 0]


def test_out_of_frame_block_names_line(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("frame,block_x,block_y,dx,dy\n0,0,0,1,2\n0,64,0,0,0\n")
    with pytest.raises(InputError, match=r"m\.csv:3"):
        parse_motion_dump(p, 64, 64)


def test_bad_header(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("a,b,c\n")
    with pytest.raises(InputError):
        parse_motion_dump(p, 64, 64)


def test_dump_roundtrip_and_select(tmp_path):
    fields = [MotionField(i, np.array([[0, 0, i, -i]]), 32, 32) for i in range(4)]
    p = tmp_path / "m.csv"
    write_motion_dump(p, fields)
    back = parse_motion_dump(p, 32, 32)
    assert [f.entries.tolist() for f in back] == [f.entries.tolist() for f in fields]
    sel = select_frames(back, 2, 4)
    assert [f.frame_index for f in sel] == [0, 1]
    assert sel[0].entries[0, 2] == 2


def test_block_matching_recovers_shift(rng):
    base = rng.integers(0, 256, (64, 64), dtype=np.uint8)
    nxt = np.roll(base, (2, -3), axis=(0, 1))
    fields = estimate_block_motion(np.stack([base, nxt]), block=16, search=4)
    assert fields[0].entries.shape[0] == 0
    inner = [e for e in fields[1].entries if 16 <= e[0] < 48 and 16 <= e[1] < 48]
    # block at (x, y) in frame 1 matches frame 0 at (x+3, y-2)
    assert all((e[2], e[3]) == (3, -2) for e in inner)
