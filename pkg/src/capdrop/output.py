"""CSV tables and the JSON manifest that fingerprints a run.

Floats are written with 17 significant digits so every double survives a
text round trip; nothing time- or host-dependent is written, so identical
configs and seeds give identical bytes.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from . import __version__
from .config import RunConfig, to_document
from .sde_engine import Path


@dataclass(frozen=True)
class Table:
    header: tuple[str, ...]
    rows: list[tuple]


class OutputError(OSError):
    def __init__(self, path: str, cause: Exception):
        self.path = path
        super().__init__(f"{path}: {cause}")


def format_cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    text = str(value)
    if any(c in text for c in ',"\n'):
        text = '"' + text.replace('"', '""') + '"'
    return text


def render_csv(table: Table) -> bytes:
    lines = [",".join(table.header)]
    width = len(table.header)
    for row in table.rows:
        if len(row) != width:
            raise ValueError(f"row has {len(row)} cells, header has {width}")
        lines.append(",".join(format_cell(v) for v in row))
    return ("\n".join(lines) + "\n").encode("utf-8")


def path_table(paths: Sequence[Path], record_every: int = 1) -> Table:
    """Long-format trajectories, every ``record_every``-th grid point plus the last."""
    rows = []
    for i, p in enumerate(paths):
        idx = list(range(0, len(p.times), record_every))
        if idx[-1] != len(p.times) - 1:
            idx.append(len(p.times) - 1)
        rows.extend((i, float(p.times[k]), float(p.values[k])) for k in idx)
    return Table(("path_index", "time", "n1"), rows)


def _write(path: str, data: bytes) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(data)
    except OSError as exc:
        raise OutputError(path, exc) from exc


def write_results(
    tables: Mapping[str, Table],
    output_dir: str,
    config: RunConfig,
    paths: Sequence[Path] | None = None,
    record_every: int = 1,
    blobs: Mapping[str, bytes] | None = None,
) -> dict:
    """Write ``<name>.csv`` per table, optional ``paths.csv`` and raw blobs, then ``manifest.json``.

    Returns the manifest.  ``files`` lists every written file in name order
    with its SHA-256 and, for CSVs, its data-row count.
    """
    try:
        os.makedirs(output_dir, exist_ok=True)
    except OSError as exc:
        raise OutputError(output_dir, exc) from exc
    outputs: dict[str, tuple[bytes, int | None]] = {}
    all_tables = dict(tables)
    if paths is not None:
        all_tables["paths"] = path_table(paths, record_every)
    for name, table in all_tables.items():
        outputs[f"{name}.csv"] = (render_csv(table), len(table.rows))
    for name, data in (blobs or {}).items():
        outputs[name] = (data, None)

    files = []
    for name in sorted(outputs):
        data, rows = outputs[name]
        _write(os.path.join(output_dir, name), data)
        entry: dict[str, Any] = {"name": name, "sha256": hashlib.sha256(data).hexdigest()}
        if rows is not None:
            entry["rows"] = rows
        files.append(entry)
    manifest = {
        "config": to_document(config),
        "seed": config.sim.master_seed,
        "version": __version__,
        "files": files,
    }
    text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    _write(os.path.join(output_dir, "manifest.json"), text.encode("utf-8"))
    return manifest


def rows_of(records: Iterable[Any], header: Sequence[str]) -> list[tuple]:
    """Pull ``header`` attributes off each record, in header order."""
    return [tuple(getattr(r, h) for h in header) for r in records]
