"""Structured periodic 2D grid, multi-variable state fields, stencil access,
and snapshot persistence.

Conventions frozen here and relied on everywhere else:

* State variables are ordered ``(u, v, eta)``.
* Field arrays have shape ``(ny, nx)``, C order, so x is the fastest index.
* A stencil holds the 5 points ``(C, W, E, S, N)`` for each variable,
  variable-major: entries 0..4 are u at (C, W, E, S, N), 5..9 are v, 10..14
  are eta. Both grid directions wrap periodically.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import SnapshotFormatError

VARIABLES = ("u", "v", "eta")
N_STATES = 3
STENCIL_POINTS = ("C", "W", "E", "S", "N")
STENCIL_SIZE = 5

_MAGIC = b"LDOS"
_VERSION = 1
_HEADER = struct.Struct("<4sIIIIIdd")


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid with equal spacing in both directions."""

    nx: int
    ny: int
    dx: float = 1.0

    def __post_init__(self):
        if self.nx < 5 or self.ny < 5:
            raise ValueError(f"grid must be at least 5x5 to fit a stencil, got {self.nx}x{self.ny}")
        if not self.dx > 0:
            raise ValueError(f"grid spacing must be positive, got {self.dx}")

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def shape(self) -> tuple[int, int]:
        """Array shape of one field: (ny, nx)."""
        return (self.ny, self.nx)


@dataclass(frozen=True)
class StateField:
    """The three state fields (u, v, eta) on a grid at one time instant.

    ``values`` has shape (3, ny, nx). Treated as immutable after construction.
    """

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (N_STATES, self.grid.ny, self.grid.nx):
            raise ValueError(
                f"field values must have shape {(N_STATES, self.grid.ny, self.grid.nx)}, got {v.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, grid: Grid, u: float = 0.0, v: float = 0.0, eta: float = 0.0) -> "StateField":
        vals = np.empty((N_STATES, grid.ny, grid.nx))
        vals[0], vals[1], vals[2] = u, v, eta
        return cls(grid, vals)

    @property
    def u(self) -> np.ndarray:
        return self.values[0]

    @property
    def v(self) -> np.ndarray:
        return self.values[1]

    @property
    def eta(self) -> np.ndarray:
        return self.values[2]

    def shifted(self, a: int, b: int) -> "StateField":
        """Field translated periodically by a cells in x and b in y."""
        return StateField(self.grid, np.roll(self.values, shift=(b, a), axis=(1, 2)))


def gather_stencil(fld: StateField, i: int, j: int) -> np.ndarray:
    """Stencil values at grid point (i, j), i indexing x and j indexing y.

    Returns the 15-vector in (C, W, E, S, N)-per-variable order; neighbor
    indices wrap periodically.
    """
    nx, ny = fld.grid.nx, fld.grid.ny
    if not (0 <= i < nx and 0 <= j < ny):
        raise IndexError(f"stencil center ({i}, {j}) outside grid {nx}x{ny}")
    iw, ie = (i - 1) % nx, (i + 1) % nx
    js, jn = (j - 1) % ny, (j + 1) % ny
    v = fld.values
    out = np.empty(N_STATES * STENCIL_SIZE)
    for n in range(N_STATES):
        out[5 * n : 5 * n + 5] = (v[n, j, i], v[n, j, iw], v[n, j, ie], v[n, js, i], v[n, jn, i])
    return out


def stencil_rows(values: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    """Stencils for every grid point, one stencil entry per row.

    ``values`` is (3, ny, nx); returns (15, ny*nx) with columns ordered like
    the flattened grid (x fastest) and rows in stencil order. ``out`` may
    supply a preallocated buffer.
    """
    ny, nx = values.shape[1:]
    if out is None:
        out = np.empty((N_STATES * STENCIL_SIZE, ny * nx))
    for n in range(N_STATES):
        a = values[n]
        k = STENCIL_SIZE * n
        out[k] = a.ravel()
        block = out[k + 1 : k + 5].reshape(4, ny, nx)
        block[0, :, 1:] = a[:, :-1]   # W: value at i-1, periodic
        block[0, :, 0] = a[:, -1]
        block[1, :, :-1] = a[:, 1:]   # E
        block[1, :, -1] = a[:, 0]
        block[2, 1:, :] = a[:-1, :]   # S: value at j-1
        block[2, 0, :] = a[-1, :]
        block[3, :-1, :] = a[1:, :]   # N
        block[3, -1, :] = a[0, :]
    return out


def stencil_matrix(values: np.ndarray) -> np.ndarray:
    """Stencils for every grid point at once.

    ``values`` is (3, ny, nx); returns (ny*nx, 15) with rows ordered like the
    flattened grid (x fastest) and columns in stencil order.
    """
    return np.ascontiguousarray(stencil_rows(values).T)


@dataclass
class SnapshotSet:
    """Time-ordered snapshots on a fixed grid with fixed inter-snapshot dt.

    ``data`` has shape (n_snapshots, 3, ny, nx). ``meta`` is a free-form JSON
    run descriptor (IC seed, dynamics label, solver scheme, ...).
    """

    grid: Grid
    dt: float
    data: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 4 or d.shape[1:] != (N_STATES, self.grid.ny, self.grid.nx):
            raise ValueError(
                f"snapshot data must have shape (T, {N_STATES}, {self.grid.ny}, {self.grid.nx}), got {d.shape}"
            )
        if d.shape[0] < 1:
            raise ValueError("snapshot set must contain at least one snapshot")
        if not self.dt > 0:
            raise ValueError(f"snapshot dt must be positive, got {self.dt}")
        self.data = d

    def __len__(self) -> int:
        return self.data.shape[0]

    def snapshot(self, t: int) -> StateField:
        return StateField(self.grid, self.data[t])

    @property
    def snapshots(self) -> list[StateField]:
        return [self.snapshot(t) for t in range(len(self))]


def write_snapshots(sset: SnapshotSet, path) -> None:
    """Write a snapshot set to ``path`` plus a ``<path>.meta.json`` sidecar.

    Little-endian layout: magic "LDOS", u32 version, u32 nx, u32 ny,
    u32 n_states, u32 n_snapshots, f64 dx, f64 dt, then all field values
    snapshot-major in (u, v, eta) order, row-major with x fastest.
    """
    path = str(path)
    g = sset.grid
    header = _HEADER.pack(_MAGIC, _VERSION, g.nx, g.ny, N_STATES, len(sset), g.dx, sset.dt)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(sset.data, dtype="<f8").tobytes())
    with open(path + ".meta.json", "w") as fh:
        json.dump(sset.meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_snapshots(path) -> SnapshotSet:
    """Read a snapshot set written by :func:`write_snapshots`."""
    path = str(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise SnapshotFormatError(
            f"header: expected at least {_HEADER.size} bytes, got {len(raw)}"
        )
    magic, version, nx, ny, n_states, n_snap, dx, dt = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise SnapshotFormatError(f"magic: expected {_MAGIC!r}, got {magic!r}")
    if version != _VERSION:
        raise SnapshotFormatError(f"version: expected {_VERSION}, got {version}")
    if n_states != N_STATES:
        raise SnapshotFormatError(f"n_states: expected {N_STATES}, got {n_states}")
    if nx < 5 or ny < 5:
        raise SnapshotFormatError(f"grid shape: invalid {nx}x{ny}")
    if n_snap < 1:
        raise SnapshotFormatError(f"n_snapshots: invalid count {n_snap}")
    expected = n_snap * n_states * nx * ny * 8
    payload = raw[_HEADER.size :]
    if len(payload) != expected:
        raise SnapshotFormatError(
            f"payload: expected {expected} bytes, got {len(payload)}"
        )
    data = np.frombuffer(payload, dtype="<f8").astype(np.float64, copy=True)
    data = data.reshape(n_snap, n_states, ny, nx)
    meta = {}
    try:
        with open(path + ".meta.json") as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        pass
    return SnapshotSet(Grid(nx, ny, dx), dt, data, meta)
