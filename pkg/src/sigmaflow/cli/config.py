"""Strict parsing of JSON run configs; every unknown key is an error."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, TypeVar

from sigmaflow.core.validators import DomainError


T = TypeVar("T")


class ConfigError(ValueError):
    def __init__(self, message: str, key_path: str = ""):
        super().__init__(f"{key_path}: {message}" if key_path else message)
        self.message = message
        self.key_path = key_path


def load_json(path: Optional[Path]) -> Dict[str, Any]:
    if path is None:
        raise ConfigError("this command needs --config")
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror or exc}", str(p)) from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}", str(p)) from exc
    if not isinstance(data, dict):
        raise ConfigError("top level must be a JSON object", str(p))
    return data


def _join(where: str, key: str) -> str:
    return f"{where}.{key}" if where else key


def check_keys(data: Any, allowed: Iterable[str], required: Iterable[str] = (), where: str = "") -> Dict[str, Any]:
    if not isinstance(data, dict):
        raise ConfigError("expected an object", where)
    allowed = set(allowed)
    for key in data:
        if key not in allowed:
            raise ConfigError(f"unknown key '{key}'", _join(where, key))
    for key in required:
        if key not in data:
            raise ConfigError("missing required key", _join(where, key))
    return data


def get_float(data: Dict[str, Any], key: str, default: Optional[float], where: str = "") -> Optional[float]:
    if key not in data:
        return default
    value = data[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}", _join(where, key))
    return float(value)


def get_int(data: Dict[str, Any], key: str, default: Optional[int], where: str = "") -> Optional[int]:
    if key not in data:
        return default
    value = data[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"expected an integer, got {value!r}", _join(where, key))
    return value


def get_bool(data: Dict[str, Any], key: str, default: bool, where: str = "") -> bool:
    if key not in data:
        return default
    value = data[key]
    if not isinstance(value, bool):
        raise ConfigError(f"expected true/false, got {value!r}", _join(where, key))
    return value


def get_str(data: Dict[str, Any], key: str, default: Optional[str], choices: Iterable[str] = (), where: str = "") -> Optional[str]:
    if key not in data:
        return default
    value = data[key]
    choices = list(choices)
    if not isinstance(value, str) or (choices and value not in choices):
        expected = f"one of {choices}" if choices else "a string"
        raise ConfigError(f"expected {expected}, got {value!r}", _join(where, key))
    return value


def get_list(data: Dict[str, Any], key: str, default: Optional[List[Any]], where: str = "") -> Optional[List[Any]]:
    if key not in data:
        return default
    value = data[key]
    if not isinstance(value, list):
        raise ConfigError(f"expected a list, got {value!r}", _join(where, key))
    return value


def section(data: Dict[str, Any], key: str, parse: Callable[[Any], T], where: str = "") -> T:
    """Parse one sub-object, reporting domain-level rejections under its key path."""
    path = _join(where, key)
    if key not in data:
        raise ConfigError("missing required key", path)
    try:
        return parse(data[key])
    except ConfigError as exc:
        raise ConfigError(exc.message, _join(path, exc.key_path) if exc.key_path else path) from exc
    except (DomainError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc), path) from exc
