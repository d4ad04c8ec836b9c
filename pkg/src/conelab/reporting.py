"""Deterministic report and trace files.

JSON reports are schema-versioned and byte-identical for a fixed config and
seed: everything nondeterministic (timestamps, wall-clock timings) lives in
the isolated ``volatile`` section, which comparisons strip.  CSV traces
carry a single header row naming columns with units in brackets.
"""

from __future__ import annotations

import json
import os
from datetime import datetime, timezone

import numpy as np

SCHEMA_VERSION = 1

__all__ = [
    "SCHEMA_VERSION",
    "write_json_report",
    "strip_volatile",
    "write_csv",
    "read_csv_columns",
    "write_grid_csv",
    "read_grid_csv",
]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, float) and obj != obj:  # NaN
        return None
    return obj


def write_json_report(path: str, report: dict) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    payload = _jsonable(report)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def strip_volatile(report: dict) -> dict:
    out = dict(report)
    out.pop("volatile", None)
    return out


def timestamp_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def write_csv(path: str, header: list, rows) -> None:
    """Write rows with a header naming columns and units, e.g.
    ``r [length]``."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(f"{v:.17g}" if isinstance(v, float) else str(v) for v in row) + "\n")


def read_csv_columns(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    names = [h.split("[")[0].strip() for h in header]
    return {name: data[:, i] for i, name in enumerate(names)}


def write_grid_csv(path: str, grid) -> None:
    """Node-value dump of a 2-d grid function: columns x, y, value."""
    pts = grid.points()
    vals = grid.values.ravel()
    write_csv(
        path,
        ["x [length]", "y [length]", "value [1]"],
        ((float(p[0]), float(p[1]), float(v)) for p, v in zip(pts, vals)),
    )


def read_grid_csv(path: str):
    """Rebuild a GridFunction from a node-value CSV on a full square lattice."""
    from .heat import GridFunction

    cols = read_csv_columns(path)
    x, y, v = cols["x"], cols["y"], cols["value"]
    xs = np.unique(x)
    ys = np.unique(y)
    if len(xs) * len(ys) != len(v) or len(xs) != len(ys):
        raise ValueError("grid CSV must cover a full square lattice")
    order = np.lexsort((y, x))
    vals = v[order].reshape(len(xs), len(ys))
    halfwidth = (xs[-1] - xs[0]) / 2.0
    center = np.array([(xs[-1] + xs[0]) / 2.0, (ys[-1] + ys[0]) / 2.0])
    return GridFunction(vals, halfwidth, center)
