"""Line-oriented ``key = value`` run configuration.

A config file holds one assignment per line; ``#`` starts a comment and blank
lines are ignored. Dotted keys (``hier.scales``) group related settings. Each
command declares a schema of known keys with types and defaults. Values are
layered as defaults < file < environment (``HRQ_`` + upper-cased key with
dots written as double underscores) < explicit overrides.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

from .exceptions import ConfigError

__all__ = ["Field", "parse_config_text", "read_config_file", "env_key", "resolve"]

ENV_PREFIX = "HRQ_"


@dataclass(frozen=True)
class Field:
    kind: str  # int | float | str | bool | ints | floats | strs
    default: object
    help: str = ""


def parse_config_text(text, source="<config>"):
    """Raw ``{key: string}`` mapping; later duplicates override earlier ones."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        out[key] = value
    return out


def read_config_file(path):
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from exc
    return parse_config_text(text, str(p))


def env_key(key):
    return ENV_PREFIX + key.upper().replace(".", "__")


def _scalar(kind, text, key):
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot read {text!r} as {kind}") from None
    if kind == "bool":
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: cannot read {text!r} as a boolean")
    return text


def coerce(kind, value, key):
    """Convert a string (or an already typed value) to the field's kind."""
    if not isinstance(value, str):
        if kind in ("ints", "floats", "strs"):
            return tuple(coerce(kind[:-1], v if isinstance(v, str) else str(v), key) for v in value)
        return coerce(kind, str(value), key)
    if kind in ("ints", "floats", "strs"):
        parts = [p.strip() for p in value.strip("()[] ").split(",") if p.strip()]
        return tuple(_scalar(kind[:-1], p, key) for p in parts)
    return _scalar(kind, value.strip(), key)


def resolve(schema, file_values=None, overrides=None, environ=None):
    """Layer defaults, file values, ``HRQ_`` variables and overrides.

    Unknown keys in the file or overrides raise :class:`ConfigError`.
    """
    environ = os.environ if environ is None else environ
    values = {k: f.default for k, f in schema.items()}
    for layer_name, layer in (("config file", file_values or {}), ("override", overrides or {})):
        unknown = sorted(set(layer) - set(schema))
        if unknown:
            raise ConfigError(f"unknown {layer_name} key(s): {', '.join(unknown)}")
    for key, text in (file_values or {}).items():
        values[key] = coerce(schema[key].kind, text, key)
    for key, f in schema.items():
        if env_key(key) in environ:
            values[key] = coerce(f.kind, environ[env_key(key)], key)
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = coerce(schema[key].kind, value, key)
    return values
