"""JSON-lines records: run manifests and evaluation metrics."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Dict, Iterable, List

import numpy as np

from .util import DsvDistillError, atomic_write_bytes, now_utc

DEFAULT_METRICS_FILE = Path("dsvdistill_metrics.jsonl")


class RecordError(DsvDistillError):
    """Raised when a record file cannot be parsed."""


def _stamp(entry: dict[str, Any]) -> dict[str, Any]:
    return {"timestamp": now_utc().isoformat(), **entry} if "timestamp" not in entry else dict(entry)


def append_record(entry: dict[str, Any], path: Path | None = None) -> None:
    """Append one record, stamping it with the current UTC time."""
    target = path or DEFAULT_METRICS_FILE
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("a", encoding="utf-8") as handle:
        handle.write(json.dumps(_stamp(entry)) + "\n")


def write_records(entries: Iterable[dict[str, Any]], path: Path) -> None:
    """Replace ``path`` with ``entries``, one JSON object per line."""
    lines = [json.dumps(entry) for entry in entries]
    atomic_write_bytes(Path(path), ("\n".join(lines) + "\n").encode("utf-8") if lines else b"")


def read_records(path: Path, kind: str | None = None) -> List[Dict[str, Any]]:
    """
    Read every record in ``path``, optionally keeping one ``kind`` only.

    Blank lines are skipped; anything else that is not a JSON object is an error.
    """
    target = Path(path)
    if not target.exists():
        return []
    records: List[Dict[str, Any]] = []
    with target.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                entry = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordError(f"{target}:{lineno}: invalid JSON record") from exc
            if not isinstance(entry, dict):
                raise RecordError(f"{target}:{lineno}: record must be an object")
            if kind is None or entry.get("kind") == kind:
                records.append(entry)
    return records


def latest_record(path: Path, kind: str | None = None) -> dict[str, Any] | None:
    records = read_records(path, kind)
    return records[-1] if records else None


def metrics_entry(
    *,
    ipc: int,
    pipc: int | str | None,
    method: str,
    seed: int,
    accuracy: float,
    epochs: int,
    wall_ms: float,
) -> dict[str, Any]:
    return {
        "kind": "metrics",
        "ipc": ipc,
        "pipc": "all" if pipc is None else pipc,
        "method": method,
        "seed": seed,
        "accuracy": accuracy,
        "epochs": epochs,
        "wall_ms": wall_ms,
    }


def summarize_metrics(records: Iterable[dict[str, Any]]) -> List[Dict[str, Any]]:
    """
    Group metrics by (method, ipc, pipc) and report mean and population std
    of the accuracy together with the number of seeds.
    """
    groups: dict[tuple[str, Any, Any], list[float]] = {}
    for entry in records:
        if entry.get("kind", "metrics") != "metrics":
            continue
        key = (str(entry["method"]), entry["ipc"], entry["pipc"])
        groups.setdefault(key, []).append(float(entry["accuracy"]))
    rows = []
    for (method, ipc, pipc), values in sorted(groups.items(), key=lambda item: tuple(map(str, item[0]))):
        accuracies = np.asarray(values, dtype=np.float64)
        rows.append(
            {
                "method": method,
                "ipc": ipc,
                "pipc": pipc,
                "mean": float(accuracies.mean()),
                "std": float(accuracies.std()),
                "seeds": len(values),
            }
        )
    return rows
