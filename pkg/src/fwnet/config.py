"""TOML run configuration with one section per subcommand.

Example::

    seed = 7

    [synth]
    num_sequences = 12
    num_frames = 20

    [train]
    iterations = 2000
    lambda = 0.4

Unknown sections or keys are rejected. Command-line flags override file
values; the resolved configuration is echoed next to every run's outputs.
"""
from __future__ import annotations

import copy
from pathlib import Path

import tomli

__all__ = ["DEFAULTS", "ConfigError", "load_config", "resolve", "derive_seed"]


class ConfigError(ValueError):
    pass


DEFAULTS: dict = {
    "seed": 0,
    "synth": {
        "num_sequences": 2,
        "num_frames": 20,
        "size": 256,
        "curve_control_points": 6,
        "curve_width_px": [2.0, 4.0],
        "tip_advance_px_per_frame": [2.0, 8.0],
        "jitter_px": 0.4,
        "noise_sigma": 0.03,
        "vessel_phantom_count": 3,
        "contrast": [0.25, 0.45],
    },
    "noise": {
        "dilation_px": 1,
        "erosion_px": 0,
        "dropout_fraction": 0.3,
        "false_positive_blobs": 6,
    },
    "ingest": {"fps": 8.0, "size": 256, "source_fps": 0.0},
    "label": {
        "scales": [1.0, 2.0, 3.0],
        "beta": 0.5,
        "c": 0.0,
        "window": 31,
        "offset": 0.2,
        "min_area": 20,
    },
    "train": {
        "learning_rate": 0.001,
        "momentum": 0.9,
        "lambda": 0.4,
        "max_pair_offset": 6,
        "batch_size": 1,
        "iterations": 5000,
        "log_every": 50,
        "normalize_loss": False,
        "grad_clip_norm": 10.0,
        "labels": "masks_raw",
        "segmentation_only": False,
    },
    "eval": {"labels": "masks_clean", "overlays": 0},
    "bench": {"warmup": 2, "reps": 3, "frames": 8},
}


def derive_seed(root: int, *path) -> int:
    """Independent child seed for a named component of a run."""
    import numpy as np

    words = [int(root)] + [sum(ord(c) * 31**k for k, c in enumerate(str(p))) % (2**32) for p in path]
    return int(np.random.SeedSequence(words).generate_state(1)[0])


def _merge(base: dict, override: dict, where: str) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if k not in base:
            raise ConfigError(f"unknown config key {where}{k!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"{where}{k} must be a table")
            out[k] = _merge(base[k], v, f"{where}{k}.")
        else:
            out[k] = _coerce(base[k], v, f"{where}{k}")
    return out


def _coerce(default, value, name):
    if isinstance(default, bool):
        if isinstance(value, str):
            if value.lower() in ("1", "true", "yes"):
                return True
            if value.lower() in ("0", "false", "no"):
                return False
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{name} must be a boolean, got {value!r}")
    try:
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, list):
            if isinstance(value, str):
                value = [x for x in value.split(",") if x.strip()]
            return [type(default[0])(x) if default else x for x in value]
    except (TypeError, ValueError):
        raise ConfigError(f"{name} has invalid value {value!r}") from None
    return value


def load_config(path=None) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULTS)
    try:
        with open(Path(path), "rb") as f:
            data = tomli.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return _merge(DEFAULTS, data, "")


def resolve(path=None, overrides: dict | None = None) -> dict:
    """Defaults, then the file, then ``{"section.key": value}`` overrides."""
    cfg = load_config(path)
    nested: dict = {}
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        node = nested
        parts = dotted.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    return _merge(cfg, nested, "")
