"""Deterministic text output helpers for CSV and JSON artifacts."""

from __future__ import annotations

import json
import math
from pathlib import Path


def fmt(value) -> str:
    """Render a cell: ints verbatim, floats at full round-trip precision."""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, int):
        return str(value)
    value = float(value)
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.17g}"


def write_csv(path, header, rows) -> None:
    """Write rows with a header line, '\\n' newlines, byte-deterministic."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt(cell) if not isinstance(cell, str) else cell for cell in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def write_json(path, obj) -> None:
    Path(path).write_text(
        json.dumps(obj, indent=2) + "\n", encoding="utf-8", newline="\n"
    )
