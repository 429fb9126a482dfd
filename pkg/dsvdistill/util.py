"""Miscellaneous helper utilities for dsvdistill."""

from __future__ import annotations

import datetime as _dt
import os
import tempfile
import time
import zlib
from pathlib import Path
from typing import Any

import numpy as np


class DsvDistillError(RuntimeError):
    """Base class for every error raised by dsvdistill."""


def deep_merge(base: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
    """Return a new dictionary with override merged into base."""
    result = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(result.get(key), dict):
            result[key] = deep_merge(result[key], value)
        else:
            result[key] = value
    return result


def derive_seed(seed: int, *tags: int | str) -> int:
    """
    Derive an independent 63-bit seed from a base seed and a tag path.

    String tags are hashed with crc32 so the result is stable across processes
    (``hash()`` is salted per interpreter).

    Args:
        seed: Base seed
        tags: Any mix of integers and strings identifying the consumer

    Returns:
        Non-negative integer usable with ``torch.Generator.manual_seed``
    """
    entropy = [int(seed) & 0xFFFFFFFF]
    for tag in tags:
        if isinstance(tag, str):
            entropy.append(zlib.crc32(tag.encode("utf-8")))
        else:
            entropy.append(int(tag) & 0xFFFFFFFF)
    state = np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint32)
    return (int(state[0]) << 31) ^ int(state[1])


def atomic_write_bytes(path: Path, payload: bytes) -> None:
    """Write ``payload`` to ``path`` through a temporary file and a rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp_name, path)
    except BaseException:
        Path(tmp_name).unlink(missing_ok=True)
        raise


class Stopwatch:
    """Monotonic wall clock reporting elapsed milliseconds."""

    def __init__(self) -> None:
        self._start = time.perf_counter()

    def elapsed_ms(self) -> float:
        return (time.perf_counter() - self._start) * 1000.0


def now_utc() -> _dt.datetime:
    """Return the current UTC datetime."""
    return _dt.datetime.now(tz=_dt.timezone.utc)
