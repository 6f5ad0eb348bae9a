"""Strict config (de)serialization shared by checkpoints and the CLI.

Configs are plain dataclasses; loading rejects unknown keys instead of
ignoring them so a typo in an experiment file cannot silently fall back
to a default.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing


class ConfigKeyError(ValueError):
    pass


def to_dict(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [to_dict(v) for v in obj]
    if isinstance(obj, dict):
        return {k: to_dict(v) for k, v in obj.items()}
    return obj


def from_dict(cls, data, path=""):
    """Build dataclass `cls` from a mapping, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigKeyError(
            f"expected a mapping for {path or cls.__name__}, got {type(data).__name__}"
        )
    hints = typing.get_type_hints(cls)
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - fields)
    if unknown:
        raise ConfigKeyError(
            f"unknown config key(s) in {path or cls.__name__}: {', '.join(unknown)}"
        )
    kwargs = {}
    for name, value in data.items():
        t = hints.get(name)
        sub_path = f"{path}.{name}" if path else name
        if dataclasses.is_dataclass(t) and isinstance(value, dict):
            kwargs[name] = from_dict(t, value, sub_path)
        elif t is tuple and isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def config_hash(obj) -> str:
    """Stable hash of the fully-resolved configuration."""
    payload = json.dumps(to_dict(obj), sort_keys=True, default=str)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def parse_override(text: str):
    """'a.b.c=value' -> (['a','b','c'], parsed value)."""
    if "=" not in text:
        raise ConfigKeyError(f"override must look like key=value, got {text!r}")
    key, raw = text.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigKeyError(f"empty key in override {text!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.split("."), value


def apply_override(tree: dict, path, value, where="override"):
    node = tree
    for part in path[:-1]:
        if part not in node or not isinstance(node[part], dict):
            raise ConfigKeyError(f"unknown config key in {where}: {'.'.join(path)}")
        node = node[part]
    if path[-1] not in node:
        raise ConfigKeyError(f"unknown config key in {where}: {'.'.join(path)}")
    node[path[-1]] = value
