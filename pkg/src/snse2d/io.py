"""Binary field snapshots and CSV output.

Snapshot layout (little endian):
    8 bytes  magic "SNSE2D01"
    u32      n
    f64      L
    f64      dealias_fraction
    2*n*n    complex coefficients as interleaved f64 (re, im), row-major k
             order, component 0 then component 1
"""
from __future__ import annotations

import json
import os
import struct

import numpy as np

from .errors import DimensionError, FormatError
from .fields import Grid, SpectralField

MAGIC = b"SNSE2D01"
_HEAD = struct.Struct("<8sIdd")


def write_field_snapshot(field: SpectralField, path) -> None:
    g = field.grid
    payload = np.ascontiguousarray(field.coeffs, dtype="<c16").tobytes()
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(MAGIC, g.n, float(g.length), float(g.dealias_fraction)))
        fh.write(payload)


def read_field_snapshot(path, grid: Grid | None = None) -> SpectralField:
    """Read a snapshot; with ``grid`` given, its n must match the file."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(MAGIC) or raw[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: bad magic at offset 0, expected {MAGIC!r}")
    if len(raw) < _HEAD.size:
        raise FormatError(f"{path}: header truncated at offset {len(raw)} of {_HEAD.size}")
    _, n, length, frac = _HEAD.unpack_from(raw)
    if grid is not None and grid.n != n:
        raise DimensionError(f"{path}: file declares n={n} at offset 8, grid expects n={grid.n}")
    want = 2 * n * n * 16
    have = len(raw) - _HEAD.size
    if have < want:
        raise FormatError(
            f"{path}: payload truncated at offset {len(raw)}, expected {_HEAD.size + want} bytes")
    if have > want:
        raise DimensionError(
            f"{path}: {have} payload bytes from offset {_HEAD.size} do not match n={n} "
            f"({want} bytes)")
    try:
        g = Grid(n, length, frac) if grid is None else grid
    except Exception as exc:
        raise FormatError(f"{path}: invalid header values at offset 8: {exc}") from None
    coeffs = np.frombuffer(raw, dtype="<c16", offset=_HEAD.size).reshape(2, n, n).astype(complex)
    return SpectralField(g, coeffs)


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, columns, rows, meta: dict | None = None) -> str:
    """Write rows under a header; ``meta`` goes into leading '#' lines."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        for k in sorted(meta or {}):
            v = meta[k]
            text = json.dumps(list(v)) if isinstance(v, (list, tuple)) else _fmt(v)
            fh.write(f"# {k}={text}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    return str(path)


def read_csv(path):
    """(meta, columns, data) from a file written by write_csv."""
    meta, lines = {}, []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                k, _, v = line[1:].strip().partition("=")
                meta[k] = v
            else:
                lines.append(line.rstrip("\n"))
    if not lines:
        raise FormatError(f"{path}: no header line")
    cols = lines[0].split(",")
    data = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:] if ln], dtype=float)
    return meta, cols, data.reshape(-1, len(cols))


def write_path_csv(path, wiener, ou, meta: dict | None = None) -> str:
    """Columns t, W, y, z of a path and its OU trajectory."""
    meta = dict(meta or {})
    meta.setdefault("seed", wiener.seed)
    meta.setdefault("dt", wiener.dt)
    meta.setdefault("t_min", wiener.t_min)
    meta.setdefault("t_max", wiener.t_max)
    rows = zip(wiener.times, wiener.values, ou.y_values, ou.z_values)
    return write_csv(path, ["t", "W", "y", "z"], rows, meta)


def write_trajectory_csv(path, record, meta: dict | None = None) -> str:
    rows = zip(record.times, record.h_norms, record.v_norms, record.budget_residuals,
               record.apriori_rho)
    return write_csv(path, ["t", "h_norm", "v_norm", "budget_residual", "rho"], rows, meta)
