"""Flat ``key = value`` configuration files.

Blank lines and lines starting with ``#`` are ignored. Numbers may be
written as fractions (``8/255``). Parsing is strict: every consumer pops the
keys it knows and :func:`ensure_consumed` rejects whatever is left.
"""

from __future__ import annotations

import hashlib
import os
from fractions import Fraction
from pathlib import Path
from typing import Mapping

from .errors import ConfigError

SEED_ENV = "STABLEGRAD_SEED"


def parse_text(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def load_file(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_text(path.read_text(), str(path))


def apply_overrides(mapping: Mapping[str, str], overrides: list[str] | None) -> dict[str, str]:
    out = dict(mapping)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override must be key=value, got {item!r}")
        key, value = (part.strip() for part in item.split("=", 1))
        out[key] = value
    return out


def apply_seed_env(mapping: Mapping[str, str], key: str = "seed") -> dict[str, str]:
    out = dict(mapping)
    if os.environ.get(SEED_ENV):
        out[key] = os.environ[SEED_ENV].strip()
    return out


def number(value: str, key: str = "?") -> float:
    try:
        return float(Fraction(value.strip()))
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"{key}: expected a number, got {value!r}") from None


def integer(value: str, key: str = "?") -> int:
    try:
        return int(value.strip())
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {value!r}") from None


def number_list(value: str, key: str = "?") -> list[float]:
    return [number(v, key) for v in value.split(",") if v.strip()]


def int_list(value: str, key: str = "?") -> list[int]:
    return [integer(v, key) for v in value.split(",") if v.strip()]


def ensure_consumed(remaining: Mapping[str, str]) -> None:
    if remaining:
        key = sorted(remaining)[0]
        raise ConfigError(f"unknown config key {key!r}")


def fmt_number(v: float) -> str:
    return repr(float(v))


def config_hash(mapping: Mapping[str, str]) -> str:
    canon = "\n".join(f"{k}={mapping[k]}" for k in sorted(mapping))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]
