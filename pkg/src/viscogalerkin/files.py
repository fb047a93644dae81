"""CSV and text outputs.

Floats are written with ``repr``, the shortest string that reads back to
the same double, so reloads are bit-exact and reruns byte-identical.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .basis import CoefficientVector, build_basis
from .integrator import COLUMNS, SCALAR_COLUMNS, StoppingEvent, TrajectoryRecord

__all__ = [
    "fmt",
    "save_snapshot",
    "load_snapshot",
    "snapshot_text",
    "TrajectoryWriter",
    "write_trajectory",
    "read_trajectory_csv",
    "write_rows",
    "append_event",
    "TRAJECTORY_HEADER",
]

TRAJECTORY_HEADER = ("t",) + COLUMNS


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, str):
        return x
    return repr(float(x))


def _writer(fh) -> "csv._writer":
    return csv.writer(fh, lineterminator="\n")


def snapshot_text(coeffs: CoefficientVector) -> str:
    b = coeffs.basis
    buf = io.StringIO()
    w = _writer(buf)
    w.writerow(["N", "m_max", "t", "grid_size"])
    w.writerow([b.N, b.m_max, fmt(coeffs.t), b.grid_size])
    head = [f"xi{k + 1}" for k in range(b.N)]
    if b.N == 3:
        head.append("branch")
    w.writerow(head + ["phase", "d"])
    for mode, val in zip(b.modes, coeffs.d):
        row = list(mode.xi)
        if b.N == 3:
            row.append(mode.branch)
        w.writerow(row + [mode.phase, fmt(val)])
    return buf.getvalue()


def save_snapshot(coeffs: CoefficientVector, path) -> Path:
    path = Path(path)
    path.write_text(snapshot_text(coeffs), encoding="utf-8", newline="\n")
    return path


def load_snapshot(path, basis=None) -> CoefficientVector:
    """Read a snapshot; the basis is rebuilt from the header unless given.

    Raises
    ------
    ValueError
        If the header or a row does not match the basis.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 3 or rows[0][:3] != ["N", "m_max", "t"]:
        raise ValueError(f"{path}: not a coefficient snapshot")
    head = dict(zip(rows[0], rows[1]))
    N, m = int(head["N"]), int(head["m_max"])
    grid = int(head["grid_size"]) if "grid_size" in head else None
    t = float(head["t"])
    if basis is None:
        basis = build_basis(N, m, grid)
    elif (basis.N, basis.m_max) != (N, m):
        raise ValueError(f"{path}: snapshot is N={N}, m_max={m}; basis is {basis}")
    d = np.zeros(basis.M)
    seen = set()
    for lineno, row in enumerate(rows[3:], start=4):
        if not row:
            continue
        xi = tuple(int(v) for v in row[:N])
        branch = int(row[N]) if N == 3 else 0
        phase, val = row[-2], float(row[-1])
        try:
            i = basis.index(xi, phase, branch)
        except KeyError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
        if i in seen:
            raise ValueError(f"{path}:{lineno}: duplicate mode {xi} {phase}")
        seen.add(i)
        d[i] = val
    return CoefficientVector(basis, d, t)


class TrajectoryWriter:
    """Append trajectory rows to a CSV as they are recorded."""

    def __init__(self, path):
        self.path = Path(path)
        self._fh = open(self.path, "w", encoding="utf-8", newline="")
        self._w = _writer(self._fh)
        self._w.writerow(TRAJECTORY_HEADER)
        self._fh.flush()

    def __call__(self, t: float, d, row: Sequence[float]) -> None:
        self._w.writerow([fmt(t)] + [fmt(v) for v in row])
        self._fh.flush()

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_trajectory(traj: TrajectoryRecord, path) -> Path:
    with TrajectoryWriter(path) as w:
        for row in traj.rows():
            w(row[0], None, row[1:])
    return Path(path)


def read_trajectory_csv(path) -> dict[str, np.ndarray]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    head, body = rows[0], rows[1:]
    data = np.array([[float(v) for v in r] for r in body]) if body else np.zeros((0, len(head)))
    return {name: data[:, k] for k, name in enumerate(head)}


def write_rows(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = _writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])
    return path


def append_event(path, event: StoppingEvent) -> None:
    with open(path, "a", encoding="utf-8", newline="") as fh:
        fh.write(event.log_line() + "\n")


# the first columns match the documented trajectory layout
assert TRAJECTORY_HEADER[: 1 + len(SCALAR_COLUMNS)] == ("t",) + SCALAR_COLUMNS
