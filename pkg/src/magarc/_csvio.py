"""Small helpers for the fixed-header numeric CSV files used across the package."""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path

import numpy as np

from .errors import InputError


def _fmt(value) -> str:
    if isinstance(value, (str, bool, np.bool_)):
        return str(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_table(path, columns: list[str], rows) -> None:
    """Write rows of values under a fixed header, LF line endings, full precision."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_table(path, columns: list[str], text_columns=(), allow_nan=False) -> dict[str, np.ndarray]:
    """Read a CSV whose header must equal ``columns`` exactly.

    Numeric columns are returned as float arrays; ``text_columns`` stay as
    object arrays of str. ``allow_nan`` accepts ``nan`` as a missing value.
    Raises InputError naming file and line on any
    parse problem.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"{path}: cannot read ({exc.strerror})") from exc
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise InputError(f"{path}:1: empty file, expected header {','.join(columns)}")
    if [h.strip() for h in header] != columns:
        raise InputError(
            f"{path}:1: bad header {','.join(header)!r}, expected {','.join(columns)!r}"
        )
    data: dict[str, list] = {c: [] for c in columns}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(columns):
            raise InputError(f"{path}:{lineno}: expected {len(columns)} fields, got {len(row)}")
        for name, raw in zip(columns, row):
            if name in text_columns:
                data[name].append(raw.strip())
                continue
            try:
                value = float(raw)
            except ValueError:
                raise InputError(f"{path}:{lineno}: field {name!r} is not a number: {raw!r}")
            if not (math.isfinite(value) or (allow_nan and math.isnan(value))):
                raise InputError(f"{path}:{lineno}: field {name!r} is not finite")
            data[name].append(value)
    return {
        c: np.array(v, dtype=object if c in text_columns else float) for c, v in data.items()
    }


def read_keyvalue(path) -> dict[str, str]:
    """Parse a plain-text ``key = value`` file. ``#`` starts a comment."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"{path}: cannot read ({exc.strerror})") from exc
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise InputError(f"{path}:{lineno}: empty key")
        out[key] = value
    return out


def write_keyvalue(path, values: dict) -> None:
    lines = [f"{k} = {_fmt(v) if not isinstance(v, (list, tuple)) else ' '.join(_fmt(x) for x in v)}"
             for k, v in values.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
