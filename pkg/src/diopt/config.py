"""Flat key=value run configuration with section prefixes.

A config file line looks like ``pipeline.step = 0.25``; '#' starts a comment.
Unknown keys are rejected against the command's defaults, and every run
snapshots its fully resolved settings next to its outputs.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path


class ConfigError(ValueError):
    pass


def load_kv(path: str | Path) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def write_kv(path: str | Path, values: dict) -> None:
    lines = [f"{k} = {values[k]}" for k in sorted(values)]
    Path(path).write_text("\n".join(lines) + "\n")


def _coerce(text: str, like) -> object:
    if isinstance(like, bool):
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"expected boolean, got {text!r}")
    if isinstance(like, int):
        return int(text)
    if isinstance(like, float):
        return float(text)
    if isinstance(like, tuple):
        elem = like[0] if like else 0
        return tuple(_coerce(part.strip(), elem) for part in text.split(","))
    return text


def resolve_settings(defaults: dict, config_path: str | Path | None,
                     overrides: dict) -> dict:
    """defaults, then config-file values, then CLI overrides (None = unset)."""
    settings = dict(defaults)
    if config_path is not None:
        for key, text in load_kv(config_path).items():
            if key not in settings:
                raise ConfigError(f"unknown config key {key!r}")
            settings[key] = _coerce(text, settings[key])
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in settings:
            raise ConfigError(f"unknown setting {key!r}")
        settings[key] = value
    return settings


def dataclass_defaults(prefix: str, instance) -> dict:
    """Flat ``prefix.field -> value`` map of a dataclass's scalar fields."""
    out = {}
    for f in dataclasses.fields(instance):
        value = getattr(instance, f.name)
        if value is None:
            continue
        out[f"{prefix}.{f.name}"] = value
    return out


def build_dataclass(cls, prefix: str, settings: dict):
    kwargs = {}
    for f in dataclasses.fields(cls):
        key = f"{prefix}.{f.name}"
        if key in settings:
            kwargs[f.name] = settings[key]
    return cls(**kwargs)


def format_value(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)
