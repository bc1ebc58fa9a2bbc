"""Flat ``key = value`` configuration documents.

Blank lines and ``#``/``;`` comments are ignored. Values are coerced by the
caller's field table; unknown keys are rejected.
"""

from __future__ import annotations

import configparser
import dataclasses
import types
import typing
from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigError

_SECTION = "config"


def parse_flat(text: str) -> dict[str, str]:
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=", ":"))
    parser.optionxform = str  # keep key case
    try:
        parser.read_string(f"[{_SECTION}]\n{text}")
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    return dict(parser[_SECTION])


def read_flat(path: str | Path) -> dict[str, str]:
    return parse_flat(Path(path).read_text())


def _coerce(raw: str, typ: Any, key: str):
    origin = typing.get_origin(typ)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(typ) if a is not type(None)]
        if raw.strip().lower() in ("", "none"):
            return None
        return _coerce(raw, args[0], key)
    if origin is typing.Literal:
        allowed = typing.get_args(typ)
        val = raw.strip()
        if val not in allowed:
            raise ConfigError(f"{key}: {val!r} not in {allowed}")
        return val
    if origin is tuple:
        (inner, *_) = typing.get_args(typ)
        return tuple(_coerce(part, inner, key) for part in raw.split(",") if part.strip())
    try:
        if typ is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw.strip())
        if typ is float:
            return float(raw.strip())
        if typ is str:
            return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ.__name__}") from exc
    raise ConfigError(f"{key}: unsupported field type {typ!r}")


def field_types(cls) -> dict[str, Any]:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls) if f.init}


def coerce_fields(cls, raw: Mapping[str, str], *, allow_unknown: bool = False) -> tuple[dict, dict]:
    """Split ``raw`` into coerced values for ``cls`` and leftover keys."""
    types_ = field_types(cls)
    known, rest = {}, {}
    for key, val in raw.items():
        if key in types_:
            known[key] = _coerce(val, types_[key], key)
        else:
            rest[key] = val
    if rest and not allow_unknown:
        raise ConfigError(f"unknown config keys: {sorted(rest)}")
    return known, rest


def dump_flat(values: Mapping[str, Any]) -> str:
    lines = []
    for key, val in values.items():
        if isinstance(val, tuple):
            val = ",".join(str(v) for v in val)
        lines.append(f"{key} = {val}")
    return "\n".join(lines) + "\n"
