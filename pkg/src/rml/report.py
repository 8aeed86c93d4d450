"""Flat key=value metric records."""

from __future__ import annotations

import hashlib
import json
import sys


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6f}"
    if isinstance(v, (list, tuple)):
        return "/".join(_fmt(x) for x in v)
    return str(v)


def format_block(values: dict) -> str:
    return "".join(f"{k}={_fmt(v)}\n" for k, v in values.items())


def emit(values: dict, path=None, stream=None) -> None:
    """Print the block to ``stream`` (stdout) and optionally write it to ``path``."""
    text = format_block(values)
    (stream or sys.stdout).write(text)
    if path:
        with open(path, "w") as fh:
            fh.write(text)


def read_block(path) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                key, _, val = line.partition("=")
                out[key] = val
    return out
