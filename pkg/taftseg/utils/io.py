"""
Deterministic JSON/CSV writers for reports and manifests.
"""

import csv
import io
import json
from pathlib import Path
from typing import Any, Iterable, Sequence, Union

from pydantic import BaseModel

PathLike = Union[str, Path]


def json_bytes(value: Any) -> bytes:
    if isinstance(value, BaseModel):
        value = value.model_dump(mode="json")
    return (json.dumps(value, indent=2, sort_keys=True) + "\n").encode("utf-8")


def write_json(path: PathLike, value: Any) -> bytes:
    """Write key-sorted, indented JSON and return the bytes written."""
    content = json_bytes(value)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(content)
    return content


def format_cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return format(value, ".12g")
    return str(value)


def csv_bytes(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> bytes:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_cell(v) for v in row])
    return buffer.getvalue().encode("utf-8")


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> bytes:
    """Write a CSV with fixed float formatting and return the bytes written."""
    content = csv_bytes(header, rows)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(content)
    return content
