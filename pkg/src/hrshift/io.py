"""Deterministic JSON/CSV serialization for results and configurations.

Output is byte-stable: keys are sorted, floats use ``repr`` round-trip
formatting, newlines are always ``"\\n"``, and nothing run-dependent
(timestamps, hostnames, paths) is ever written.  Non-finite floats become
JSON ``null`` so files stay standard-compliant.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .util import ConfigError

__all__ = ["dump_json", "write_json", "load_json", "write_csv"]


def _sanitize(obj):
    if isinstance(obj, dict):
        return {str(k): _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_sanitize(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else None
    return obj


def dump_json(obj) -> str:
    """Canonical JSON text for ``obj`` (sorted keys, two-space indent)."""
    return json.dumps(_sanitize(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dump_json(obj), encoding="utf-8")


def load_json(path):
    text = Path(path).read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return repr(value) if math.isfinite(value) else ""
    return str(value)


def write_csv(path, table) -> None:
    """Write a ``ResultTable`` (or anything with .columns/.rows) as CSV."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(table.columns)
        for row in table.rows:
            writer.writerow([_cell(v) for v in row])
