"""Shared configuration helpers: canonical hashing, env lookups, defaults."""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Any

ENV_CACHE_DIR = "SLIDERKIT_CACHE_DIR"
ENV_BIND = "SLIDERKIT_BIND"


def canonical_json(obj: Any) -> str:
    """Deterministic JSON text: sorted keys, no whitespace drift."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def config_hash(obj: Any) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def cache_dir() -> Path:
    root = os.environ.get(ENV_CACHE_DIR)
    if root:
        path = Path(root)
    else:
        path = Path.home() / ".cache" / "sliderkit"
    path.mkdir(parents=True, exist_ok=True)
    return path


def bind_address(explicit: str | None = None) -> tuple[str, int]:
    raw = explicit or os.environ.get(ENV_BIND, "127.0.0.1:8787")
    host, _, port = raw.rpartition(":")
    if not host or not port.isdigit():
        from .errors import ConfigurationError

        raise ConfigurationError(f"bind address must look like host:port, got {raw!r}")
    return host, int(port)
