"""File formats shared between pipeline stages.

Everything is delimited text so stages stay independently inspectable:

- heatmap store: one record per line,
  ``record_id,entity_id,phase_ids(;-joined),loc_cells,dir_cells`` where the
  cell fields are the 35x50 grids flattened row-major into space-joined
  integers;
- split manifests: one record id per line;
- embeddings: CSV with ``record_id,entity_id,split,phase_ids,e0..e{2d-1}``;
- stage logs: line-delimited JSON records.

All writers go through a temp file + rename so a crashed stage never leaves
a truncated output behind.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import MalformedFileError, MissingInputError
from .heatmap import GridBounds, HeatmapGrid, HeatmapPair


def atomic_write_text(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def require_input(path: str | Path, what: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"{what} not found: {path}")
    return path


def write_stage_log(path: str | Path, records: list[dict]) -> None:
    atomic_write_text(path, "".join(json.dumps(r, sort_keys=True) + "\n" for r in records))


# ---------------------------------------------------------------------------
# Heatmap store


def _grid_to_field(grid: HeatmapGrid) -> str:
    return " ".join(str(int(v)) for v in grid.counts.ravel())


def write_heatmap_store(path: str | Path, pairs: Iterable[HeatmapPair],
                        *, rows: int, cols: int,
                        loc_bounds: GridBounds, dir_bounds: GridBounds) -> int:
    header = json.dumps({
        "rows": rows, "cols": cols,
        "loc_bounds": [loc_bounds.x_min, loc_bounds.x_max, loc_bounds.y_min, loc_bounds.y_max],
        "dir_bounds": [dir_bounds.x_min, dir_bounds.x_max, dir_bounds.y_min, dir_bounds.y_max],
    }, sort_keys=True)
    lines = [f"#{header}"]
    n = 0
    for p in pairs:
        lines.append(",".join([
            p.record_id, p.entity_id, ";".join(p.phase_ids),
            _grid_to_field(p.location), _grid_to_field(p.direction),
        ]))
        n += 1
    atomic_write_text(path, "\n".join(lines) + "\n")
    return n


def read_heatmap_store(path: str | Path) -> dict[str, HeatmapPair]:
    path = require_input(path, "heatmap store")
    with open(path) as fh:
        header_line = fh.readline()
        if not header_line.startswith("#"):
            raise MalformedFileError(f"{path}: missing store header")
        try:
            header = json.loads(header_line[1:])
            rows, cols = header["rows"], header["cols"]
            loc_bounds = GridBounds(*header["loc_bounds"])
            dir_bounds = GridBounds(*header["dir_bounds"])
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise MalformedFileError(f"{path}: bad store header: {exc}") from exc
        pairs: dict[str, HeatmapPair] = {}
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 5:
                raise MalformedFileError(f"{path}:{lineno}: expected 5 fields, got {len(parts)}")
            record_id, entity_id, phase_field, loc_field, dir_field = parts
            try:
                loc = np.fromiter(loc_field.split(), dtype=np.int64,
                                  count=rows * cols).reshape(rows, cols)
                dirn = np.fromiter(dir_field.split(), dtype=np.int64,
                                   count=rows * cols).reshape(rows, cols)
            except ValueError as exc:
                raise MalformedFileError(f"{path}:{lineno}: bad grid field: {exc}") from exc
            pairs[record_id] = HeatmapPair(
                HeatmapGrid(loc, loc_bounds), HeatmapGrid(dirn, dir_bounds),
                entity_id, tuple(phase_field.split(";")),
            )
    return pairs


# ---------------------------------------------------------------------------
# Split manifests


def write_manifest(path: str | Path, record_ids: Iterable[str]) -> None:
    atomic_write_text(path, "".join(rid + "\n" for rid in record_ids))


def read_manifest(path: str | Path) -> list[str]:
    path = require_input(path, "split manifest")
    return [line.strip() for line in path.read_text().splitlines() if line.strip()]


# ---------------------------------------------------------------------------
# Embedding table


def write_embeddings(path: str | Path, rows: list[tuple[str, str, str, str, np.ndarray]]) -> None:
    """Rows are (record_id, entity_id, split, phase_ids-joined, vector)."""
    if rows:
        dim = len(rows[0][4])
    else:
        dim = 0
    header = "record_id,entity_id,split,phase_ids," + ",".join(f"e{i}" for i in range(dim))
    lines = [header]
    for record_id, entity_id, split, phases, vec in rows:
        vals = ",".join(f"{v:.9e}" for v in vec)
        lines.append(f"{record_id},{entity_id},{split},{phases},{vals}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_embeddings(path: str | Path) -> list[tuple[str, str, str, tuple[str, ...], np.ndarray]]:
    path = require_input(path, "embeddings table")
    lines = path.read_text().splitlines()
    if not lines or not lines[0].startswith("record_id,"):
        raise MalformedFileError(f"{path}: missing embeddings header")
    out = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) < 5:
            raise MalformedFileError(f"{path}:{lineno}: too few fields")
        vec = np.array([float(v) for v in parts[4:]])
        out.append((parts[0], parts[1], parts[2], tuple(parts[3].split(";")), vec))
    return out
