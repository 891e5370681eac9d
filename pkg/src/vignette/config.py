"""Library configuration read from ``<library_root>/vignette.toml``.

Example::

    [encoder]
    kind = "external"                # or "mock" (default)
    command = "ffmpeg ... {input} ... {output}"
    decode_command = "ffmpeg -i {input} -f rawvideo -pix_fmt gray {output}"
    workers = 4
    motion_extractor = "mvdump {input} {output}"

    [tiles]
    max_tiles = 50
    min_tile_width = 256
    floor_frac = 0.1

    [mock]
    header_bytes_per_tile = 200

    [library]
    segment_len_s = 12
    saliency = "builtin"

    [[policy]]
    kind = "popularity_decay"
    threshold = 10
    action = "vignette_squeeze"
    squeeze_target_kbps = 500
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from vignette.encoder import ENCODER_ENV, EncoderProfile, MockRDParams
from vignette.errors import ConfigError
from vignette.tiling import DEFAULT_FLOOR_FRAC, SearchLimits

CONFIG_NAME = "vignette.toml"


@dataclass
class LibraryConfig:
    profile: EncoderProfile = field(default_factory=EncoderProfile)
    limits: SearchLimits = field(default_factory=SearchLimits)
    floor_frac: float = DEFAULT_FLOOR_FRAC
    segment_len_s: float = 12.0
    saliency: str = "builtin"
    motion_extractor: str | None = None
    policies: list = field(default_factory=list)


def _pick(cls, table: dict, section: str) -> dict:
    names = {f.name for f in fields(cls)}
    unknown = set(table) - names
    if unknown:
        raise ConfigError(f"[{section}] has unknown keys: {', '.join(sorted(unknown))}")
    return dict(table)


def load_config(root, workers: int | None = None, backend: str | None = None) -> LibraryConfig:
    """Read the config file if present; CLI-level overrides win."""
    path = Path(root) / CONFIG_NAME
    data = {}
    if path.exists():
        try:
            data = tomllib.loads(path.read_text())
        except (tomllib.TOMLDecodeError, OSError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(data, workers=workers, backend=backend)


def config_from_dict(data: dict, workers: int | None = None, backend: str | None = None) -> LibraryConfig:
    enc = dict(data.get("encoder", {}))
    tiles = dict(data.get("tiles", {}))
    lib = dict(data.get("library", {}))
    floor_frac = float(tiles.pop("floor_frac", DEFAULT_FLOOR_FRAC))
    try:
        limits = SearchLimits(**_pick(SearchLimits, tiles, "tiles"))
        mock = MockRDParams(**{k: float(v) for k, v in _pick(MockRDParams, data.get("mock", {}), "mock").items()})
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    kind = backend or enc.get("kind", "mock")
    if os.environ.get(ENCODER_ENV) and backend is None and "kind" not in enc:
        kind = "external"
    n_workers = workers or int(enc.get("workers", os.cpu_count() or 1))
    if kind == "external":
        profile = EncoderProfile.external(enc.get("command"), worker_limit=n_workers,
                                          decode_template=enc.get("decode_command"),
                                          crf_template=enc.get("crf_command"), mock_params=mock)
    elif kind == "mock":
        profile = EncoderProfile("mock", worker_limit=n_workers, mock_params=mock)
    else:
        raise ConfigError(f"unknown encoder kind {kind!r}")
    from vignette.storage import Policy

    policies = [Policy.from_dict(p) for p in data.get("policy", [])]
    return LibraryConfig(
        profile=profile,
        limits=limits,
        floor_frac=floor_frac,
        segment_len_s=float(lib.get("segment_len_s", 12.0)),
        saliency=str(lib.get("saliency", "builtin")),
        motion_extractor=enc.get("motion_extractor"),
        policies=policies,
    )
