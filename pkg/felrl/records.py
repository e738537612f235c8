# felrl/records.py
"""
Persistence helpers: metric streams, CSV/JSON writers and hashing.

All writers format floats with `repr`, so reruns with the same seeds produce
byte-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from os import PathLike
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np

log = logging.getLogger(__name__)

# ─────────────────────────────────────────────────────────────────────────────
# Constants
# ─────────────────────────────────────────────────────────────────────────────
# Artifact file names inside a seed directory
EPISODES_CSV = "episodes.csv"
EPOCHS_CSV = "epochs.csv"
VERIFICATION_CSV = "verification.csv"
POLICY_FILE = "policy.npz"
MANIFEST_FILE = "manifest.json"
FAILED_MARKER = "FAILED"


def format_value(value: Any) -> str:
    """Render one CSV cell deterministically."""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return "nan" if math.isnan(v) else repr(v)
    return str(value)


def write_csv(path: str | PathLike, columns: list[str], rows: Iterable[Mapping[str, Any]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_value(row[c]) for c in columns])


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_json_default)


def _json_default(obj: Any):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer, np.floating, np.bool_)):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def config_hash(obj: Any) -> str:
    """sha256 of the canonical JSON form of a config mapping."""
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def write_json(path: str | PathLike, obj: Any) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2, default=_json_default)
        fh.write("\n")


def file_sha256(path: str | PathLike) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ─────────────────────────────────────────────────────────────────────────────
# Metric stream
# ─────────────────────────────────────────────────────────────────────────────
@dataclass
class RunRecord:
    """
    Ordered metric rows (one per episode or per epoch) plus run-level summary.

    :param kind: "naf2" (episode rows) or "aedyna" (epoch rows).
    :param columns: Fixed column order used when writing CSV.
    """
    kind: str
    columns: list[str]
    rows: list[dict[str, Any]] = field(default_factory=list)
    summary: dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.rows)

    def append(self, row: Mapping[str, Any]) -> None:
        missing = [c for c in self.columns if c not in row]
        if missing:
            raise KeyError(f"row lacks columns {missing}")
        self.rows.append(dict(row))

    def column(self, name: str) -> list[Any]:
        return [r[name] for r in self.rows]

    def to_csv(self, path: str | PathLike) -> None:
        write_csv(path, self.columns, self.rows)
        log.debug("wrote %d %s rows to %s", len(self.rows), self.kind, path)
