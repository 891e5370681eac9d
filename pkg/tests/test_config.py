import pytest

from vignette.config import load_config
from vignette.errors import ConfigError


@pytest.fixture(autouse=True)
def _no_env(monkeypatch):
    monkeypatch.delenv("VIGNETTE_ENCODER", raising=False)


def test_defaults(tmp_path):
    cfg = load_config(tmp_path)
    assert cfg.profile.kind == "mock"
    assert cfg.limits.max_tiles == 50 and cfg.floor_frac == 0.1 and cfg.segment_len_s == 12


def test_full_file(tmp_path):
    (tmp_path / "vignette.toml").write_text("""
[encoder]
kind = "external"
command = "enc {input} {output} {bitrate_kbps} {crop_x} {crop_y} {crop_w} {crop_h} {duration_s}"
workers = 3

[tiles]
max_tiles = 20
floor_frac = 0.2

[mock]
header_bytes_per_tile = 100

[library]
segment_len_s = 6

[[policy]]
kind = "popularity_decay"
threshold = 10
action = "vignette_squeeze"
squeeze_target_kbps = 500
""")
    cfg = load_config(tmp_path)
    assert cfg.profile.kind == "external" and cfg.profile.worker_limit == 3
    assert cfg.limits.max_tiles == 20 and cfg.floor_frac == 0.2
    assert cfg.profile.mock_params.header_bytes_per_tile == 100
    assert cfg.segment_len_s == 6
    assert cfg.policies[0].squeeze_target_kbps == 500
    assert load_config(tmp_path, workers=1, backend="mock").profile.kind == "mock"


@pytest.mark.parametrize("text", [
    "[tiles]\nbogus = 1\n",
    "[encoder]\nkind = \"external\"\ncommand = \"enc {input} {output}\"\n",
    "[encoder\n",
    "[[policy]]\nkind = \"nope\"\nthreshold = 1\naction = \"vignette_transcode\"\n",
])
def test_bad_configs(tmp_path, text):
    (tmp_path / "vignette.toml").write_text(text)
    with pytest.raises(ConfigError):
        load_config(tmp_path)
