"""Plain-text run configuration and experiment presets.

Config files are INI-style ``key = value`` pairs under ``[data]`` and
``[train]`` sections (diff-friendly, no extra parser dependency). A preset
is a named bundle of mode flags reproducing one cell of the ablation grid;
it is applied on top of the file values, and an explicit ``--seed`` wins
over both.
"""

from __future__ import annotations

import configparser
import json
from dataclasses import fields, replace
from pathlib import Path

from .errors import ConfigError
from .synthdata import DataConfig
from .trainer import TrainConfig, config_to_dict

PRESETS: dict[str, dict] = {
    # image-level baselines
    "vanilla": dict(
        meta_subset=(), use_mitigator=False, use_pixel_loss=False, use_filter=False,
    ),
    "single-meta": dict(
        meta_subset=(0,), use_mitigator=False, use_pixel_loss=False, use_filter=False,
    ),
    "multi-naive": dict(
        meta_subset=None, use_mitigator=False, use_pixel_loss=False, use_filter=False,
    ),
    "multi-mitigated": dict(
        meta_subset=None, use_mitigator=True, use_pixel_loss=False, use_filter=False,
    ),
    # pixel-level additions on the vanilla base
    "+pixcl": dict(
        meta_subset=(), use_mitigator=False, use_pixel_loss=True, use_filter=False,
    ),
    "+gradfilter": dict(
        meta_subset=(), use_mitigator=False, use_pixel_loss=True, use_filter=True,
    ),
    # everything on
    "full": dict(
        meta_subset=None, use_mitigator=True, use_pixel_loss=True, use_filter=True,
    ),
}

_BOOL_FIELDS = {f.name for f in fields(TrainConfig) if f.type == "bool"}
_INT_FIELDS = {f.name for f in fields(TrainConfig) if f.type == "int"}
_FLOAT_FIELDS = {f.name for f in fields(TrainConfig) if f.type == "float"}


def _parse_meta_subset(raw: str) -> tuple[int, ...] | None:
    raw = raw.strip()
    if raw.lower() in ("", "none"):
        return ()
    if raw.lower() == "all":
        return None
    try:
        return tuple(int(tok) for tok in raw.split(","))
    except ValueError as exc:
        raise ConfigError(f"bad meta_subset value {raw!r}") from exc


def _read_ini(path) -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    text = Path(path).read_text()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file {path}: {exc}") from exc
    return parser


def train_config_from_section(section) -> TrainConfig:
    """Build a TrainConfig from one INI section, defaulting missing keys."""
    kwargs = {}
    known = {f.name for f in fields(TrainConfig)}
    for key, raw in section.items():
        if key not in known:
            raise ConfigError(f"unknown train option {key!r}")
        try:
            if key == "meta_subset":
                kwargs[key] = _parse_meta_subset(raw)
            elif key in _BOOL_FIELDS:
                states = configparser.ConfigParser.BOOLEAN_STATES
                if raw.lower() not in states:
                    raise ConfigError(f"bad boolean for {key}: {raw!r}")
                kwargs[key] = states[raw.lower()]
            elif key in _INT_FIELDS:
                kwargs[key] = int(raw)
            elif key in _FLOAT_FIELDS:
                kwargs[key] = float(raw)
            else:
                kwargs[key] = raw
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return TrainConfig(**kwargs)


def data_config_from_section(section) -> tuple[DataConfig, int, int, str | None]:
    """Returns (config, count, seed, dataset_path). A path short-circuits generation."""
    path = section.get("path")
    count = section.getint("count", fallback=48)
    seed = section.getint("seed", fallback=7)
    kwargs = {}
    known = {f.name for f in fields(DataConfig)}
    for key, raw in section.items():
        if key in ("path", "count", "seed"):
            continue
        if key not in known:
            raise ConfigError(f"unknown data option {key!r}")
        try:
            if key == "label_sources":
                kwargs[key] = tuple(tok.strip() for tok in raw.split(","))
            elif key in ("height", "width", "feature_dim", "n_factor_a", "n_factor_b"):
                kwargs[key] = int(raw)
            else:
                kwargs[key] = float(raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    config = DataConfig(**kwargs)
    if path is None:
        config.validate()
        if count < 2:
            raise ConfigError("data count must be >= 2")
    return config, count, seed, path


def load_run_config(path) -> tuple[DataConfig, int, int, str | None, TrainConfig]:
    """Parse a run config file into (data config, count, data seed, path, train config)."""
    parser = _read_ini(path)
    data_section = parser["data"] if parser.has_section("data") else parser["DEFAULT"]
    train_section = parser["train"] if parser.has_section("train") else parser["DEFAULT"]
    data_cfg, count, data_seed, data_path = data_config_from_section(data_section)
    train_cfg = train_config_from_section(train_section)
    return data_cfg, count, data_seed, data_path, train_cfg


def apply_preset(
    config: TrainConfig, preset: str, single_meta_label: int | None = None
) -> TrainConfig:
    if preset not in PRESETS:
        raise ConfigError(
            f"unknown preset {preset!r}; choose from {sorted(PRESETS)}"
        )
    overrides = dict(PRESETS[preset])
    if preset == "single-meta" and single_meta_label is not None:
        overrides["meta_subset"] = (int(single_meta_label),)
    return replace(config, **overrides)


def resolved_manifest(
    data_cfg: DataConfig,
    count: int,
    data_seed: int,
    data_path: str | None,
    train_cfg: TrainConfig,
    preset: str | None,
) -> dict:
    return {
        "format": "metacontrast-run-v1",
        "preset": preset,
        "data": {
            "path": data_path,
            "count": count,
            "seed": data_seed,
            **{**data_cfg.__dict__, "label_sources": list(data_cfg.label_sources)},
        },
        "train": config_to_dict(train_cfg),
    }


def write_manifest(path, manifest: dict) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
