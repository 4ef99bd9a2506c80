"""CSV output with a '#'-prefixed metadata header."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .. import __version__


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, Path):
        return str(obj)
    return obj


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (complex, np.complexfloating)):
        return f"{complex(v).real!r}{complex(v).imag:+.17g}j"
    return str(v)


def write_csv(path: str | Path, columns: list[str], rows: list[list], metadata: dict | None = None) -> Path:
    """Write rows to ``path``; each metadata entry becomes a '# key: json' line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"code_version": __version__, **(metadata or {})}
    with open(path, "w", newline="") as fh:
        for k, v in meta.items():
            fh.write(f"# {k}: {json.dumps(_jsonable(v), sort_keys=True)}\n")
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(v) for v in r])
    return path


def read_csv(path: str | Path) -> tuple[dict, list[str], list[list[str]]]:
    """Inverse of :func:`write_csv` (values are returned as strings)."""
    meta, lines = {}, []
    with open(path) as fh:
        for line in fh:
            if line.startswith("# "):
                key, _, val = line[2:].partition(": ")
                meta[key] = json.loads(val)
            else:
                lines.append(line)
    rows = list(csv.reader(lines))
    return meta, rows[0], rows[1:]
