"""KSF1 binary field snapshots and time-slab checkpoints.

Layout (little-endian): magic ``KSF1``, u64 ``n``, f64 ``l``, f64 ``t``,
f64 ``tau``, f64 ``gamma``, then ``n*n`` f64 values of ``u`` and of ``v``
in row-major order.  A slab checkpoint is a directory of snapshots plus a
plain-text index with one ``j t_j filename`` line per node.
"""
from __future__ import annotations

import os
import struct
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .field import Grid2D, Params, SpectralField

MAGIC = b"KSF1"
_HEADER = struct.Struct("<4sQdddd")


class SnapshotError(ValueError):
    """Raised for unreadable or inconsistent snapshot files; names the file."""

    def __init__(self, path, reason: str):
        self.path = str(path)
        super().__init__(f"{self.path}: {reason}")


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def write_snapshot(path, u: SpectralField, v: Optional[SpectralField], t: float, params: Params) -> Path:
    path = Path(path)
    g = u.grid
    v = SpectralField.zeros(g) if v is None else v
    if v.grid != g:
        raise ValueError("u and v must share a grid")
    head = _HEADER.pack(MAGIC, g.n, g.l, float(t), params.tau, params.gamma)
    body = np.ascontiguousarray(u.values, dtype="<f8").tobytes() + np.ascontiguousarray(v.values, dtype="<f8").tobytes()
    _atomic_write(path, head + body)
    return path


def write_state(path, state) -> Path:
    return write_snapshot(path, state.u, state.v, state.t, state.params)


def read_snapshot(path) -> Tuple[SpectralField, SpectralField, float, Params]:
    """Return ``(u, v, t, params)``; any corruption raises :class:`SnapshotError`."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise SnapshotError(path, f"cannot read ({exc.strerror})") from exc
    if len(raw) < _HEADER.size:
        raise SnapshotError(path, "file shorter than the KSF1 header")
    magic, n, l, t, tau, gamma = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise SnapshotError(path, f"bad magic {magic!r}")
    expected = _HEADER.size + 16 * n * n
    if len(raw) != expected:
        raise SnapshotError(path, f"size {len(raw)} bytes, expected {expected} for n={n}")
    try:
        grid = Grid2D(int(n), float(l))
        params = Params(float(tau), float(gamma))
    except ValueError as exc:
        raise SnapshotError(path, f"invalid header ({exc})") from exc
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(2, n, n)
    if not np.all(np.isfinite(data)):
        raise SnapshotError(path, "non-finite field values")
    u = SpectralField(grid, values=data[0].astype(float))
    v = SpectralField(grid, values=data[1].astype(float))
    return u, v, float(t), params


def read_state(path):
    from .evolution import EvolutionState

    u, v, t, params = read_snapshot(path)
    return EvolutionState(u, v, t, params)


INDEX_NAME = "index.txt"


def write_slab(directory, slab, params: Params, prefix: str = "node") -> List[Path]:
    """Write every node ``j >= 1`` of ``slab`` as KSF1 (``v`` stored as zero) plus the index.

    Returns all files written, index last.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    zero = SpectralField.zeros(slab.space)
    files = []
    lines = []
    width = len(str(slab.tgrid.count))
    for j, (t, f) in enumerate(zip(slab.times, slab.fields), start=1):
        name = f"{prefix}_{j:0{width}d}.ksf"
        files.append(write_snapshot(directory / name, f, zero, t, params))
        lines.append(f"{j} {float(t)!r} {name}\n")
    index = directory / INDEX_NAME
    _atomic_write(index, "".join(lines).encode())
    files.append(index)
    return files


def read_slab(directory, tgrid):
    """Load a checkpoint written by :func:`write_slab` onto ``tgrid``."""
    from .mild import TimeSlab

    directory = Path(directory)
    index = directory / INDEX_NAME
    try:
        lines = index.read_text().split("\n")
    except OSError as exc:
        raise SnapshotError(index, f"cannot read ({exc.strerror})") from exc
    entries = []
    for k, line in enumerate(l for l in lines if l.strip()):
        parts = line.split()
        if len(parts) != 3:
            raise SnapshotError(index, f"line {k + 1} does not read 'j t_j filename'")
        try:
            entries.append((int(parts[0]), float(parts[1]), parts[2]))
        except ValueError as exc:
            raise SnapshotError(index, f"line {k + 1}: {exc}") from exc
    if [e[0] for e in entries] != list(range(1, tgrid.count + 1)):
        raise SnapshotError(index, f"expected nodes 1..{tgrid.count}")
    fields = []
    for (j, t, name), node in zip(entries, tgrid.nodes[1:]):
        if abs(t - node) > 1e-12 * max(1.0, node):
            raise SnapshotError(index, f"node {j} time {t} does not match the grid ({node})")
        u, _, ts, _ = read_snapshot(directory / name)
        if abs(ts - t) > 1e-12 * max(1.0, t):
            raise SnapshotError(directory / name, f"header time {ts} disagrees with index time {t}")
        fields.append(u)
    return TimeSlab(tgrid, tuple(fields))
