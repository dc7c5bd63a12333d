"""TOML model configuration: keys model, dim, resolution, stencil_order, interior_margin, params.*"""

from __future__ import annotations

import sys
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigurationError

ALLOWED_KEYS = {"model", "dim", "resolution", "stencil_order", "interior_margin", "params"}


def parse_config(text: str) -> dict[str, Any]:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"malformed config: {exc}") from exc
    return validate(data)


def load_config(path: str | Path) -> dict[str, Any]:
    p = Path(path)
    if not p.is_file():
        raise ConfigurationError(f"config file not found: {p}")
    return parse_config(p.read_text())


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def validate(data: dict) -> dict:
    unknown = set(data) - ALLOWED_KEYS
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    out = dict(data)
    if "dim" in out and not _is_int(out["dim"]):
        raise ConfigurationError("dim must be an integer")
    if "resolution" in out:
        res = out["resolution"]
        res = [res] if _is_int(res) else res
        if not isinstance(res, list) or not res or not all(_is_int(r) for r in res):
            raise ConfigurationError("resolution must be an integer or a list of integers")
        out["resolution"] = res
    if "stencil_order" in out and not _is_int(out["stencil_order"]):
        raise ConfigurationError("stencil_order must be an integer")
    if "interior_margin" in out and (isinstance(out["interior_margin"], bool) or not isinstance(out["interior_margin"], (int, float))):
        raise ConfigurationError("interior_margin must be a number")
    if "params" in out and not isinstance(out["params"], dict):
        raise ConfigurationError("params must be a table")
    return out
