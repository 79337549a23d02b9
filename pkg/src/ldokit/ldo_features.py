"""Feature bases on the 5-point stencil, local-operator coefficients, and
forward application/integration of a learned operator.

A local dynamic operator maps the 15 stencil values (3 variables x 5 points)
to the time derivative of (u, v, eta) at the stencil center, as a linear
combination of Q basis features with a Q x 3 coefficient matrix P.

Feature ordering is frozen; coefficient matrices are meaningless without it.

``quadratic`` basis (Q = 1 + 15 + 15*16/2 = 136):
    index 0                 constant 1
    indices 1..15           raw stencil entries S_1..S_15, variable-major
                            (u, v, eta), points (C, W, E, S, N) within each
    indices 16..135         products S_j * S_k for j <= k, lexicographic (j, k)

``diffop`` basis (Q = 1 + 3 + 6 + 6 + 3 + 18 + 18 = 55):
    index 0                 constant 1
    1..3                    center values u_C, v_C, eta_C
    4..9                    gradient components, variable-then-direction:
                            gx(u), gy(u), gx(v), gy(v), gx(eta), gy(eta)
    10..15                  per-direction Laplacian components, same order
    16..18                  squared center values
    19..36                  center (x) gradient products, center variable
                            outer, gradient component inner
    37..54                  center (x) Laplacian products, same layout

Gradients use central differences (E - W)/(2 dx); per-direction Laplacians
use (E - 2C + W)/dx^2. The quadratic basis is built from raw stencil values,
so dx is absorbed into the coefficients there.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core_grid import (
    N_STATES,
    STENCIL_POINTS,
    STENCIL_SIZE,
    VARIABLES,
    SnapshotSet,
    StateField,
    stencil_rows,
)
from .errors import BLOWUP_THRESHOLD, BlowUpError, NonFiniteStateError

_DIRS = ("x", "y")


@dataclass(frozen=True)
class BasisSpec:
    """Identifies a feature basis; only the RSW configuration is supported."""

    kind: str
    n_states: int = 3
    stencil_size: int = 5
    spatial_dim: int = 2

    def __post_init__(self):
        if self.kind not in ("quadratic", "diffop"):
            raise ValueError(f"unsupported basis kind: {self.kind!r}")

    @property
    def q(self) -> int:
        nm = self.n_states * self.stencil_size
        if self.kind == "quadratic":
            return 1 + nm + nm * (nm + 1) // 2
        n, x = self.n_states, self.spatial_dim
        return 1 + n + n * x + n * x + n + n * n * x + n * n * x

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "n_states": self.n_states,
            "stencil_size": self.stencil_size,
            "spatial_dim": self.spatial_dim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BasisSpec":
        return cls(d["kind"], d["n_states"], d["stencil_size"], d["spatial_dim"])


def quadratic_basis() -> BasisSpec:
    return BasisSpec("quadratic")


def diffop_basis() -> BasisSpec:
    return BasisSpec("diffop")


def stencil_entry_names() -> list[str]:
    """The 15 stencil entry names in storage order, e.g. 'u_C', 'eta_N'."""
    return [f"{v}_{p}" for v in VARIABLES for p in STENCIL_POINTS]


def stencil_entry_index(variable: str, point: str) -> int:
    return STENCIL_SIZE * VARIABLES.index(variable) + STENCIL_POINTS.index(point)


def _check_rsw_spec(spec: BasisSpec) -> None:
    if (spec.n_states, spec.stencil_size, spec.spatial_dim) != (3, 5, 2):
        raise ValueError(
            "only the (3 states, 5-point stencil, 2D) configuration is supported, "
            f"got ({spec.n_states}, {spec.stencil_size}, {spec.spatial_dim})"
        )


def enumerate_basis(spec: BasisSpec) -> list[str]:
    """Ordered feature descriptors for the basis; position = feature index."""
    if spec.kind == "quadratic":
        nm = spec.n_states * spec.stencil_size
        if spec.n_states == N_STATES and spec.stencil_size == STENCIL_SIZE:
            entries = stencil_entry_names()
        else:
            entries = [f"s{i}" for i in range(1, nm + 1)]
        out = ["1"] + list(entries)
        for j in range(nm):
            for k in range(j, nm):
                out.append(f"{entries[j]}*{entries[k]}")
        return out
    _check_rsw_spec(spec)
    out = ["1"]
    out += [f"{v}_C" for v in VARIABLES]
    grads = [f"grad_{d}({v})" for v in VARIABLES for d in _DIRS]
    laps = [f"lap_{d}({v})" for v in VARIABLES for d in _DIRS]
    out += grads
    out += laps
    out += [f"{v}_C^2" for v in VARIABLES]
    out += [f"{v}_C*{g}" for v in VARIABLES for g in grads]
    out += [f"{v}_C*{l}" for v in VARIABLES for l in laps]
    return out


def feature_index(spec: BasisSpec, descriptor: str) -> int:
    """Inverse of :func:`enumerate_basis` for a single descriptor."""
    try:
        return enumerate_basis(spec).index(descriptor)
    except ValueError:
        raise KeyError(f"unknown feature descriptor {descriptor!r}") from None


def quad_linear_index(j: int) -> int:
    """Quadratic-basis index of the linear feature S_{j+1} (0-based entry j)."""
    return 1 + j


def quad_pair_index(j: int, k: int) -> int:
    """Quadratic-basis index of S_{j+1} * S_{k+1} (0-based entries, any order)."""
    nm = N_STATES * STENCIL_SIZE
    if j > k:
        j, k = k, j
    if not (0 <= j <= k < nm):
        raise IndexError(f"stencil entry pair ({j}, {k}) out of range")
    return 1 + nm + j * nm - j * (j - 1) // 2 + (k - j)


_NM = N_STATES * STENCIL_SIZE


def diffop_index(block: str, var: int = 0, direction: int = 0, center: int = 0) -> int:
    """Index into the diffop basis by block name.

    Blocks: 'const', 'center' (var), 'grad'/'lap' (var, direction),
    'center2' (var), 'cgrad'/'clap' (center, var, direction).
    """
    n, x = N_STATES, 2
    if block == "const":
        return 0
    if block == "center":
        return 1 + var
    if block == "grad":
        return 1 + n + x * var + direction
    if block == "lap":
        return 1 + n + n * x + x * var + direction
    if block == "center2":
        return 1 + n + 2 * n * x + var
    if block == "cgrad":
        return 1 + 2 * n + 2 * n * x + n * x * center + x * var + direction
    if block == "clap":
        return 1 + 2 * n + 2 * n * x + n * n * x + n * x * center + x * var + direction
    raise KeyError(f"unknown diffop block {block!r}")


def _features_t(
    s_rows: np.ndarray,
    spec: BasisSpec,
    dx: float,
    out: np.ndarray | None = None,
) -> np.ndarray:
    """Transposed feature evaluation: stencil rows (15, n) -> features (Q, n).

    The hot path for operator application: every feature occupies one
    contiguous row, the product block is filled by broadcast multiplies, and
    the tendency is one (3 x Q) @ (Q x n) matmul away.
    """
    n = s_rows.shape[1]
    if out is None:
        out = np.empty((spec.q, n))
    out[0] = 1.0
    if spec.kind == "quadratic":
        nm = spec.n_states * spec.stencil_size
        out[1 : 1 + nm] = s_rows
        for j in range(nm):
            start = 1 + nm + j * nm - j * (j - 1) // 2
            np.multiply(s_rows[j], s_rows[j:], out=out[start : start + nm - j])
        return out
    _check_rsw_spec(spec)
    c = s_rows[0::5]
    w = s_rows[1::5]
    e = s_rows[2::5]
    so = s_rows[3::5]
    no = s_rows[4::5]
    grads = out[4:10].reshape(3, 2, n)
    np.subtract(e, w, out=grads[:, 0])
    np.subtract(no, so, out=grads[:, 1])
    grads /= 2.0 * dx
    laps = out[10:16].reshape(3, 2, n)
    np.subtract(e, c, out=laps[:, 0])
    laps[:, 0] += w - c
    np.subtract(no, c, out=laps[:, 1])
    laps[:, 1] += so - c
    laps /= dx * dx
    out[1:4] = c
    np.multiply(c, c, out=out[16:19])
    np.multiply(c[:, None, :], out[4:10][None, :, :], out=out[19:37].reshape(3, 6, n))
    np.multiply(c[:, None, :], out[10:16][None, :, :], out=out[37:55].reshape(3, 6, n))
    return out


def eval_features_matrix(stencils: np.ndarray, spec: BasisSpec, dx: float = 1.0) -> np.ndarray:
    """Feature rows for a batch of stencils; (n, 15) -> (n, Q)."""
    s = np.atleast_2d(np.asarray(stencils, dtype=np.float64))
    if s.shape[1] != spec.n_states * spec.stencil_size:
        raise ValueError(
            f"stencil length {s.shape[1]} does not match basis ({spec.n_states * spec.stencil_size})"
        )
    return np.ascontiguousarray(_features_t(np.ascontiguousarray(s.T), spec, dx).T)


def eval_features(stencil: np.ndarray, spec: BasisSpec, dx: float = 1.0) -> np.ndarray:
    """Feature vector of one stencil; first entry is always 1."""
    return eval_features_matrix(np.asarray(stencil)[None, :], spec, dx)[0]


@dataclass(frozen=True)
class LdoCoefficients:
    """Coefficient matrix P (Q x 3) together with the basis it lives in."""

    basis: BasisSpec
    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=np.float64)
        if p.shape != (self.basis.q, self.basis.n_states):
            raise ValueError(
                f"coefficient matrix must have shape {(self.basis.q, self.basis.n_states)}, got {p.shape}"
            )
        if not np.all(np.isfinite(p)):
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "p", p)

    @classmethod
    def zeros(cls, basis: BasisSpec) -> "LdoCoefficients":
        return cls(basis, np.zeros((basis.q, basis.n_states)))


def save_coefficients(coeffs: LdoCoefficients, path) -> None:
    payload = {"basis": coeffs.basis.to_dict(), "p": coeffs.p.tolist()}
    with open(str(path), "w") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_coefficients(path) -> LdoCoefficients:
    with open(str(path)) as fh:
        payload = json.load(fh)
    return LdoCoefficients(BasisSpec.from_dict(payload["basis"]), np.array(payload["p"]))


class _OperatorKernel:
    """Reusable buffers for repeated operator application on one grid.

    Amortizes all allocations across the steps of a forward integration;
    ``tendency`` returns an internal buffer that is overwritten on the next
    call.
    """

    def __init__(self, coeffs: LdoCoefficients, ny: int, nx: int):
        n = ny * nx
        spec = coeffs.basis
        self.spec = spec
        self.s_rows = np.empty((spec.n_states * spec.stencil_size, n))
        self.psi = np.empty((spec.q, n))
        self.p_t = np.ascontiguousarray(coeffs.p.T)
        self.tend = np.empty((spec.n_states, ny, nx))

    def tendency(self, values: np.ndarray, dx: float) -> np.ndarray:
        stencil_rows(values, out=self.s_rows)
        _features_t(self.s_rows, self.spec, dx, out=self.psi)
        np.matmul(self.p_t, self.psi, out=self.tend.reshape(self.spec.n_states, -1))
        return self.tend


def apply_ldo_values(coeffs: LdoCoefficients, values: np.ndarray, dx: float) -> np.ndarray:
    """Tendency arrays (3, ny, nx) from raw state arrays (3, ny, nx)."""
    kernel = _OperatorKernel(coeffs, values.shape[1], values.shape[2])
    return kernel.tendency(values, dx).copy()


def apply_ldo(coeffs: LdoCoefficients, fld: StateField) -> StateField:
    """Operator tendency at every grid point (translation-equivariant)."""
    if not np.all(np.isfinite(fld.values)):
        raise NonFiniteStateError("apply_ldo requires a finite state")
    return StateField(fld.grid, apply_ldo_values(coeffs, fld.values, fld.grid.dx))


def integrate_ldo(
    coeffs: LdoCoefficients,
    ic: StateField,
    dt: float,
    n_steps: int,
    record_every: int = 1,
    meta: dict | None = None,
) -> SnapshotSet:
    """Forward-Euler integration of a local operator.

    Snapshots are recorded after every ``record_every`` steps (the initial
    condition itself is not stored), so the result holds
    ``n_steps // record_every`` snapshots at spacing ``dt * record_every``.
    Raises :class:`BlowUpError` with the failing step index when any value
    exceeds ``BLOWUP_THRESHOLD`` or becomes non-finite.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if n_steps < record_every:
        raise ValueError("n_steps must be at least record_every to record a snapshot")
    grid, dx = ic.grid, ic.grid.dx
    kernel = _OperatorKernel(coeffs, grid.ny, grid.nx)
    x = ic.values.copy()
    records = []
    for step in range(1, n_steps + 1):
        t = kernel.tendency(x, dx)
        t *= dt
        x += t
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > BLOWUP_THRESHOLD:
            raise BlowUpError(step)
        if step % record_every == 0:
            records.append(x.copy())
    base_meta = {"integrator": "euler", "dt": dt, "n_steps": n_steps, "record_every": record_every}
    if meta:
        base_meta.update(meta)
    return SnapshotSet(grid, dt * record_every, np.stack(records), base_meta)


def rsw_reference_coefficients(params, dx: float, spec: BasisSpec) -> LdoCoefficients:
    """Coefficients of the central-difference rotating shallow water tendency.

    The discretized tendency lies exactly in both bases, so
    ``apply_ldo`` with this matrix reproduces the direct finite-difference
    tendency at every grid point.
    """
    g = params.pressure_coef
    inv_eps = 1.0 / params.epsilon
    p = np.zeros((spec.q, 3))
    if spec.kind == "quadratic":
        _check_rsw_spec(spec)
        w = 1.0 / (2.0 * dx)
        ent = stencil_entry_index
        u_c, u_w, u_e, u_s, u_n = (ent("u", pt) for pt in STENCIL_POINTS)
        v_c, v_w, v_e, v_s, v_n = (ent("v", pt) for pt in STENCIL_POINTS)
        h_c, h_w, h_e, h_s, h_n = (ent("eta", pt) for pt in STENCIL_POINTS)

        def lin(entry, col, coef):
            p[quad_linear_index(entry), col] += coef

        def quad(a, b, col, coef):
            p[quad_pair_index(a, b), col] += coef

        # u: -(u u_x + v u_y) - v/eps - g eta_x
        quad(u_c, u_e, 0, -w)
        quad(u_c, u_w, 0, +w)
        quad(v_c, u_n, 0, -w)
        quad(v_c, u_s, 0, +w)
        lin(v_c, 0, -inv_eps)
        lin(h_e, 0, -g * w)
        lin(h_w, 0, +g * w)
        # v: -(u v_x + v v_y) + u/eps - g eta_y
        quad(u_c, v_e, 1, -w)
        quad(u_c, v_w, 1, +w)
        quad(v_c, v_n, 1, -w)
        quad(v_c, v_s, 1, +w)
        lin(u_c, 1, +inv_eps)
        lin(h_n, 1, -g * w)
        lin(h_s, 1, +g * w)
        # eta: -(eta div(u) + u eta_x + v eta_y) - g div(u)
        quad(h_c, u_e, 2, -w)
        quad(h_c, u_w, 2, +w)
        quad(h_c, v_n, 2, -w)
        quad(h_c, v_s, 2, +w)
        quad(u_c, h_e, 2, -w)
        quad(u_c, h_w, 2, +w)
        quad(v_c, h_n, 2, -w)
        quad(v_c, h_s, 2, +w)
        lin(u_e, 2, -g * w)
        lin(u_w, 2, +g * w)
        lin(v_n, 2, -g * w)
        lin(v_s, 2, +g * w)
        return LdoCoefficients(spec, p)
    _check_rsw_spec(spec)
    iu, iv, ih = 0, 1, 2
    ix, iy = 0, 1
    # u
    p[diffop_index("cgrad", var=iu, direction=ix, center=iu), 0] = -1.0
    p[diffop_index("cgrad", var=iu, direction=iy, center=iv), 0] = -1.0
    p[diffop_index("center", var=iv), 0] = -inv_eps
    p[diffop_index("grad", var=ih, direction=ix), 0] = -g
    # v
    p[diffop_index("cgrad", var=iv, direction=ix, center=iu), 1] = -1.0
    p[diffop_index("cgrad", var=iv, direction=iy, center=iv), 1] = -1.0
    p[diffop_index("center", var=iu), 1] = +inv_eps
    p[diffop_index("grad", var=ih, direction=iy), 1] = -g
    # eta
    p[diffop_index("cgrad", var=iu, direction=ix, center=ih), 2] = -1.0
    p[diffop_index("cgrad", var=iv, direction=iy, center=ih), 2] = -1.0
    p[diffop_index("cgrad", var=ih, direction=ix, center=iu), 2] = -1.0
    p[diffop_index("cgrad", var=ih, direction=iy, center=iv), 2] = -1.0
    p[diffop_index("grad", var=iu, direction=ix), 2] = -g
    p[diffop_index("grad", var=iv, direction=iy), 2] = -g
    return LdoCoefficients(spec, p)
