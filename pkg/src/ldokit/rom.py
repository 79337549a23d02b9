"""POD-DEIM-Galerkin reduction of a local operator.

The full state (u, v, eta stacked into one vector of length 3*nx*ny) is
projected onto m POD modes; the operator tendency is interpolated from d
greedily selected points instead of being evaluated everywhere. Per step the
reduced model only reconstructs state values on the union of the selected
cells' stencils, evaluates the operator there, and applies the precomputed
m x d matrix, so the cost scales with (m + Q) * d rather than with the grid.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .core_grid import Grid, SnapshotSet, StateField
from .errors import BLOWUP_THRESHOLD, BlowUpError, DeimSelectionError
from .ldo_features import BasisSpec, LdoCoefficients, apply_ldo_values


@dataclass(frozen=True)
class PodBasis:
    """Leading left singular vectors of the stacked snapshot matrix."""

    modes: np.ndarray
    singular_values: np.ndarray

    @property
    def m(self) -> int:
        return self.modes.shape[1]


def stack_snapshots(sset: SnapshotSet) -> np.ndarray:
    """Snapshot matrix with one stacked (u, v, eta) column per snapshot."""
    return sset.data.reshape(len(sset), -1).T


def compute_pod(sset: SnapshotSet, m: int) -> PodBasis:
    """First m POD modes of the raw snapshots (no mean subtraction)."""
    if m < 1:
        raise ValueError("m must be at least 1")
    if m > len(sset):
        raise ValueError(f"m={m} exceeds snapshot count {len(sset)}")
    return _pod_of_matrix(stack_snapshots(sset), m)


def _pod_of_matrix(matrix: np.ndarray, m: int) -> PodBasis:
    u, s, _ = np.linalg.svd(matrix, full_matrices=False)
    return PodBasis(np.ascontiguousarray(u[:, :m]), s[:m].copy())


def deim_select(u_modes: np.ndarray, d: int) -> np.ndarray:
    """Greedy interpolation indices for the given orthonormal mode matrix.

    Index k maximizes |residual| of column k against interpolation on the
    previously chosen indices; ties resolve to the lowest index.
    """
    u_modes = np.asarray(u_modes, dtype=np.float64)
    if u_modes.ndim != 2:
        raise ValueError("mode matrix must be 2-D")
    if d < 1 or d > u_modes.shape[1]:
        raise ValueError(f"d must be in [1, {u_modes.shape[1]}], got {d}")
    indices = np.empty(d, dtype=np.int64)
    indices[0] = int(np.argmax(np.abs(u_modes[:, 0])))
    for k in range(1, d):
        picked = indices[:k]
        try:
            coef = np.linalg.solve(u_modes[picked, :k], u_modes[picked, k])
        except np.linalg.LinAlgError:
            raise DeimSelectionError(k) from None
        r = u_modes[:, k] - u_modes[:, :k] @ coef
        idx = int(np.argmax(np.abs(r)))
        if r[idx] == 0.0 or idx in picked:
            raise DeimSelectionError(k)
        indices[k] = idx
    return indices


def _stencil_cells(grid: Grid, cells: np.ndarray) -> np.ndarray:
    """Global cell ids of (C, W, E, S, N) for each given cell id."""
    nx, ny = grid.nx, grid.ny
    j, i = np.divmod(cells, nx)
    return np.stack(
        [
            cells,
            j * nx + (i - 1) % nx,
            j * nx + (i + 1) % nx,
            ((j - 1) % ny) * nx + i,
            ((j + 1) % ny) * nx + i,
        ],
        axis=1,
    )


@dataclass(frozen=True)
class RomModel:
    """Precomputed reduced model for one base operator and one grid.

    ``r_matrix`` is phi^T U (D^T U)^{-1}. The gather arrays describe which
    grid cells must be reconstructed to evaluate the operator at the
    interpolation cells (at most 5 per cell).
    """

    grid: Grid
    phi: PodBasis
    deim_modes: np.ndarray
    deim_indices: np.ndarray
    r_matrix: np.ndarray
    ldo: LdoCoefficients
    deim_var: np.ndarray
    deim_cellpos: np.ndarray
    unique_cells: np.ndarray
    stencil_pos: np.ndarray
    gather_cells: np.ndarray
    phi_gather: np.ndarray

    @property
    def m(self) -> int:
        return self.phi.m

    @property
    def d(self) -> int:
        return self.deim_indices.size


def _rom_geometry(grid: Grid, phi_modes: np.ndarray, deim_indices: np.ndarray):
    n_cells = grid.n_cells
    deim_var, deim_cell = np.divmod(deim_indices, n_cells)
    unique_cells, deim_cellpos = np.unique(deim_cell, return_inverse=True)
    stencil = _stencil_cells(grid, unique_cells)
    gather_cells, stencil_pos_flat = np.unique(stencil, return_inverse=True)
    stencil_pos = stencil_pos_flat.reshape(stencil.shape)
    rows = (np.arange(3)[:, None] * n_cells + gather_cells[None, :]).ravel()
    phi_gather = np.ascontiguousarray(phi_modes[rows])
    return deim_var, deim_cellpos, unique_cells, stencil_pos, gather_cells, phi_gather


def build_rom(snapshots: SnapshotSet, ldo: LdoCoefficients, m: int, d: int) -> RomModel:
    """Assemble the reduced model from state snapshots and their tendencies.

    State modes come from the snapshots; interpolation modes from the
    operator tendency applied to each snapshot. ``d >= m`` is recommended.
    """
    if d < m:
        warnings.warn(f"d={d} below m={m}; interpolation may limit accuracy", stacklevel=2)
    if d > len(snapshots):
        raise ValueError(f"d={d} exceeds snapshot count {len(snapshots)}")
    grid = snapshots.grid
    phi = compute_pod(snapshots, m)
    tend = np.stack(
        [apply_ldo_values(ldo, snapshots.data[t], grid.dx).ravel() for t in range(len(snapshots))],
        axis=1,
    )
    deim = _pod_of_matrix(tend, d)
    indices = deim_select(deim.modes, d)
    dtu = deim.modes[indices, :]
    r_matrix = np.linalg.solve(dtu.T, (phi.modes.T @ deim.modes).T).T
    geo = _rom_geometry(grid, phi.modes, indices)
    return RomModel(grid, phi, deim.modes, indices, r_matrix, ldo, *geo)


def reduce_state(rom: RomModel, fld: StateField) -> np.ndarray:
    return rom.phi.modes.T @ fld.values.ravel()


def reconstruct(rom: RomModel, coords: np.ndarray) -> np.ndarray:
    """Full state arrays (3, ny, nx) from reduced coordinates."""
    x = rom.phi.modes @ np.asarray(coords)
    return x.reshape(3, rom.grid.ny, rom.grid.nx)


class _RomKernel:
    """Preallocated buffers for the reduced right-hand side."""

    def __init__(self, rom: RomModel, coeffs: LdoCoefficients):
        n_u = rom.unique_cells.size
        spec = coeffs.basis
        self.rom = rom
        self.spec = spec
        self.s_rows = np.empty((15, n_u))
        self.psi = np.empty((spec.q, n_u))
        self.p_t = np.ascontiguousarray(coeffs.p.T)
        self.tend = np.empty((3, n_u))

    def rhs(self, c: np.ndarray, dx: float) -> tuple[np.ndarray, float]:
        from .ldo_features import _features_t

        rom = self.rom
        vals = (rom.phi_gather @ c).reshape(3, -1)
        for var in range(3):
            for pt in range(5):
                self.s_rows[5 * var + pt] = vals[var][rom.stencil_pos[:, pt]]
        _features_t(self.s_rows, self.spec, dx, out=self.psi)
        np.matmul(self.p_t, self.psi, out=self.tend)
        f_d = self.tend[rom.deim_var, rom.deim_cellpos]
        return rom.r_matrix @ f_d, float(np.max(np.abs(vals)))


def integrate_rom(
    rom: RomModel,
    ic: StateField,
    dt: float,
    n_steps: int,
    record_every: int = 1,
    coeffs: LdoCoefficients | None = None,
) -> tuple[np.ndarray, SnapshotSet]:
    """Euler-step the reduced dynamics; returns reduced and reconstructed
    trajectories.

    ``coeffs`` substitutes a (possibly perturbed) operator for the one the
    model was built with; it must share the basis. Recording follows the
    full integrator's convention (after every ``record_every`` steps).
    """
    if coeffs is None:
        coeffs = rom.ldo
    if coeffs.basis != rom.ldo.basis:
        raise ValueError("substituted coefficients must share the build basis")
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if n_steps < record_every:
        raise ValueError("n_steps must be at least record_every to record a snapshot")
    if ic.grid != rom.grid:
        raise ValueError("initial condition grid differs from the model grid")
    dx = rom.grid.dx
    kernel = _RomKernel(rom, coeffs)
    c = rom.phi.modes.T @ ic.values.ravel()
    records = []
    for step in range(1, n_steps + 1):
        rhs, local_max = kernel.rhs(c, dx)
        c = c + dt * rhs
        if not np.all(np.isfinite(c)) or local_max > BLOWUP_THRESHOLD:
            raise BlowUpError(step)
        if step % record_every == 0:
            records.append(c.copy())
    coords = np.stack(records)
    full = (rom.phi.modes @ coords.T).T.reshape(-1, 3, rom.grid.ny, rom.grid.nx)
    meta = {"integrator": "rom_euler", "dt": dt, "n_steps": n_steps, "record_every": record_every,
            "m": rom.m, "d": rom.d}
    return coords, SnapshotSet(rom.grid, dt * record_every, full, meta)


def flop_estimate(
    n_cells: int,
    q: int,
    n_states: int = 3,
    stencil_size: int = 5,
    n_modes: int = 30,
    n_deim: int = 105,
) -> tuple[int, int]:
    """Per-step operation counts: full operator vs reduced model.

    Full evaluation touches every cell (n_cells * Q * N); the reduced model
    reconstructs at most stencil_size * d points from m modes and evaluates
    the operator at d points (M*d*m + Q*d*N).
    """
    full = n_cells * q * n_states
    reduced = stencil_size * n_deim * n_modes + q * n_deim * n_states
    return full, reduced


def save_rom(rom: RomModel, path) -> None:
    """Write the model as a .npz array container plus a .json descriptor."""
    path = str(path)
    np.savez(
        path + ".npz",
        phi=rom.phi.modes,
        singular_values=rom.phi.singular_values,
        deim_modes=rom.deim_modes,
        deim_indices=rom.deim_indices,
        r_matrix=rom.r_matrix,
        p=rom.ldo.p,
    )
    desc = {
        "grid": {"nx": rom.grid.nx, "ny": rom.grid.ny, "dx": rom.grid.dx},
        "basis": rom.ldo.basis.to_dict(),
        "m": rom.m,
        "d": rom.d,
    }
    with open(path + ".json", "w") as fh:
        json.dump(desc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_rom(path) -> RomModel:
    path = str(path)
    with open(path + ".json") as fh:
        desc = json.load(fh)
    arrays = np.load(path + ".npz")
    grid = Grid(desc["grid"]["nx"], desc["grid"]["ny"], desc["grid"]["dx"])
    basis = BasisSpec.from_dict(desc["basis"])
    phi = PodBasis(arrays["phi"], arrays["singular_values"])
    ldo = LdoCoefficients(basis, arrays["p"])
    indices = arrays["deim_indices"]
    geo = _rom_geometry(grid, phi.modes, indices)
    return RomModel(grid, phi, arrays["deim_modes"], indices, arrays["r_matrix"], ldo, *geo)
