"""Deterministic text artifacts: CSV with a provenance comment header, checksums."""

from __future__ import annotations

import csv
import hashlib
import io
from pathlib import Path

from . import __version__

TOOL = "rashomon-qxg"


def header_line(config_hash: str) -> str:
    return f"# {TOOL} {__version__} config={config_hash}"


def fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return ""
    return str(value)


def csv_text(columns, rows, comments=()) -> str:
    buf = io.StringIO()
    for c in comments:
        buf.write(c if c.startswith("#") else f"# {c}")
        buf.write("\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="\n")
    return path


def write_csv(path, columns, rows, comments=()) -> Path:
    return write_text(path, csv_text(columns, rows, comments))


def read_csv(path) -> tuple[list[str], list[dict[str, str]]]:
    """Rows of a CSV written by :func:`write_csv`; returns ``(comments, rows)``."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    comments = [ln for ln in lines if ln.startswith("#")]
    body = [ln for ln in lines if not ln.startswith("#")]
    return comments, list(csv.DictReader(body))


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
