"""Deterministic serialization helpers for artifact files."""

from __future__ import annotations

import csv
import hashlib
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


def format_real(x: float) -> str:
    """Render a float with 17 significant digits (lossless float64 round trip)."""
    return format(float(x), ".17g")


def format_real_list(xs: Iterable[float]) -> str:
    """JSON array literal of reals, 17 significant digits each."""
    return "[" + ",".join(format_real(x) for x in xs) + "]"


def format_cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format_real(value)
    return str(value)


def write_csv(path: Path | str, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """Write a CSV with deterministic float formatting and '\\n' line endings."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_cell(v) for v in row])
    return path


def sha256_arrays(*arrays: np.ndarray) -> str:
    """Hex digest over the raw bytes of the given arrays, in order."""
    h = hashlib.sha256()
    for arr in arrays:
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()
