"""Writers for run artifacts: JSON summaries, CSV tables and grid dumps."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence

import numpy as np


def _plain(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return "nan" if math.isnan(value) else ("inf" if value > 0 else "-inf")
    return value


def dumps_json(payload: Dict[str, Any]) -> str:
    return json.dumps(_plain(payload), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def write_json(path: Path, payload: Dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_json(payload), encoding="utf-8")
    return path


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]], comments: Sequence[str] = ()) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as f:
        for line in comments:
            f.write(f"# {line}\n")
        writer = csv.writer(f)
        writer.writerow(list(header))
        for row in rows:
            writer.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    return path


def write_potential_grid(path: Path, header: Dict[str, Any], values: np.ndarray) -> Path:
    """Periodic node values, one row per node, preceded by a JSON header comment."""
    values = np.asarray(values, dtype=float)
    N = values.shape[0]
    rows: List[List[Any]] = []
    for index in np.ndindex(*values.shape):
        coords = [i / N for i in index]
        rows.append(list(index) + coords + [float(values[index])])
    n = values.ndim
    names = [f"i{a}" for a in range(n)] + [f"x{a}" for a in range(n)] + ["phi"]
    return write_csv(path, names, rows, comments=[json.dumps(_plain(header), sort_keys=True)])


def write_points(path: Path, points: np.ndarray, values: np.ndarray, name: str = "value") -> Path:
    points = np.asarray(points, dtype=float)
    n = points.shape[1]
    rows = [list(p) + [float(v)] for p, v in zip(points, np.asarray(values, dtype=float))]
    return write_csv(path, [f"x{a}" for a in range(n)] + [name], rows)


def read_csv_rows(path: Path) -> List[Dict[str, str]]:
    with Path(path).open(encoding="utf-8", newline="") as f:
        lines = [line for line in f if not line.startswith("#")]
    return list(csv.DictReader(lines))
