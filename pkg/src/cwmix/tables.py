"""Result tables and their CSV / JSON serialization."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class ResultTable:
    """Rectangular table of numbers.

    ``meta`` is deterministic given the inputs; ``run_info`` holds things like
    wall time that change between reruns and only goes to the sidecar file.
    """

    columns: list[str]
    rows: list[list] = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    run_info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.columns = list(self.columns)
        if len(set(self.columns)) != len(self.columns):
            raise ValueError("duplicate column names")
        for row in self.rows:
            self._check_row(row)

    def _check_row(self, row):
        if len(row) != len(self.columns):
            raise ValueError(f"row has {len(row)} fields, table has {len(self.columns)} columns")

    def append(self, row) -> None:
        row = list(row)
        self._check_row(row)
        self.rows.append(row)

    def column(self, name: str) -> list:
        j = self.columns.index(name)
        return [r[j] for r in self.rows]

    def records(self) -> list[dict]:
        return [dict(zip(self.columns, r)) for r in self.rows]

    def where(self, **conds) -> list[dict]:
        return [r for r in self.records() if all(r[k] == v for k, v in conds.items())]


def format_value(v) -> str:
    """Text form of one cell; floats get 17 significant digits so they round-trip."""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    if hasattr(v, "item"):  # numpy scalar
        return format_value(v.item())
    return str(v)


def parse_value(text: str):
    """Inverse of :func:`format_value` for numeric cells; other text is returned as is."""
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def _plain(v):
    if hasattr(v, "item"):
        v = v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def to_csv(table: ResultTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(table.columns)
    for row in table.rows:
        w.writerow([format_value(v) for v in row])
    return buf.getvalue()


def read_csv(text: str) -> ResultTable:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    return ResultTable(header, [[parse_value(c) for c in row] for row in reader])


def to_json(table: ResultTable) -> str:
    doc = {"meta": _jsonable(table.meta), "columns": table.columns,
           "rows": [dict(zip(table.columns, map(_plain, r))) for r in table.rows]}
    return json.dumps(doc, indent=2, sort_keys=False, allow_nan=False) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return _plain(obj)


def meta_path(path: Path) -> Path:
    return path.with_name(path.name + ".meta.json") if path.suffix == "" else path.with_suffix(".meta.json")


def emit(table: ResultTable, fmt: str, path) -> Path:
    """Write ``table`` as csv or json to ``path`` plus a sibling .meta.json.

    Returns the sidecar path. I/O errors are re-raised with the offending path.
    """
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown format {fmt!r}")
    path = Path(path)
    body = to_csv(table) if fmt == "csv" else to_json(table)
    side = meta_path(path)
    if side == path:
        raise ValueError(f"output path {path} collides with its metadata file")
    sidecar = dict(_jsonable(table.meta))
    sidecar.update(_jsonable(table.run_info))
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(body)
        with open(side, "w", encoding="utf-8") as fh:
            json.dump(sidecar, fh, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write {exc.filename or path}: {exc.strerror or exc}") from exc
    return side
