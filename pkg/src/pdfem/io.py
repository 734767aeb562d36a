"""File emission helpers: atomic writes, CSV tables and key=value blocks."""

from __future__ import annotations

import os
import tempfile
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np


def fmt(value) -> str:
    """Shortest round-trip decimal for floats, plain str otherwise."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if value is None:
        return "n/a"
    return str(value)


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    out = [",".join(header)]
    out += [",".join(fmt(v) for v in row) for row in rows]
    return "\n".join(out) + "\n"


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    atomic_write_text(path, csv_text(header, rows))


def kv_text(items: Mapping) -> str:
    return "".join(f"{k}={fmt(v)}\n" for k, v in items.items())


def write_kv(path, items: Mapping) -> None:
    atomic_write_text(path, kv_text(items))


def parse_kv(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def snapshot_header(d: int) -> list:
    cols = ["step", "time", "node"]
    cols += [f"x{i}" for i in range(d)]
    cols += [f"u{i}" for i in range(d)]
    cols += [f"v{i}" for i in range(d)]
    return cols


def snapshot_rows(step: int, time: float, nodes: np.ndarray, U: np.ndarray, V: np.ndarray):
    for i in range(len(nodes)):
        yield (step, time, i, *nodes[i], *U[i], *V[i])


ENERGY_HEADER = ["step", "time", "kinetic", "potential", "total", "work_bound"]


def read_snapshot_csv(path, step: int | None = None):
    """Return (nodes, U, V) from a snapshot CSV; last step unless ``step`` given."""
    data = np.genfromtxt(path, delimiter=",", names=True)
    data = np.atleast_1d(data)
    names = data.dtype.names
    steps = data["step"]
    target = steps.max() if step is None else step
    sel = data[steps == target]
    sel = np.sort(sel, order="node")
    d = sum(1 for n in names if n.startswith("x"))
    X = np.column_stack([sel[f"x{i}"] for i in range(d)])
    U = np.column_stack([sel[f"u{i}"] for i in range(d)])
    V = np.column_stack([sel[f"v{i}"] for i in range(d)])
    return X, U, V
