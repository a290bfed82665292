"""Flat key=value configuration files.

One assignment per line, ``#`` comments and blank lines ignored.  Values
stay strings until a consumer coerces them; command-line flags always win
over file values.
"""

from __future__ import annotations

from pathlib import Path

from .errors import ConfigError


def load_config(path) -> dict[str, str]:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {p} does not exist")
    out: dict[str, str] = {}
    for line_no, raw in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{p}:{line_no}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"{p}:{line_no}: empty key")
        out[key] = value.strip()
    return out


def coerce_int(cfg: dict[str, str], key: str, default: int) -> int:
    if key not in cfg:
        return default
    try:
        return int(cfg[key])
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: {cfg[key]!r} is not an integer") from exc


def coerce_float(cfg: dict[str, str], key: str, default: float) -> float:
    if key not in cfg:
        return default
    try:
        return float(cfg[key])
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: {cfg[key]!r} is not a number") from exc
