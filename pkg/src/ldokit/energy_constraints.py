"""Energy-conserving perturbation subspace around the shallow water operator.

The pointwise energy density eta*(E_K + E_P) is left unchanged in time by any
operator perturbation whose tendency contribution (tu, tv, te) satisfies

    (E_K + 2 E_P) * te + (eta u) * tu + (eta v) * tv = 0

at every stencil. Within the quadratic feature basis the solutions form an
18-dimensional space: two directions trading kinetic against potential
energy, and sixteen rotation-like directions (-v, u, 0) scaled by 1 or by one
of the 15 stencil entries.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core_grid import STENCIL_SIZE, N_STATES
from .ldo_features import (
    BasisSpec,
    LdoCoefficients,
    eval_features,
    quad_linear_index,
    quad_pair_index,
    rsw_reference_coefficients,
    stencil_entry_index,
)
from .rsw_dynamics import RswParams


@dataclass(frozen=True)
class PerturbationSubspace:
    """A base operator plus energy-conserving direction matrices.

    Perturbed operators are base.p + sum_i lambda_i * directions[i].p.
    """

    base: LdoCoefficients
    directions: tuple[LdoCoefficients, ...]
    labels: tuple[str, ...]

    def __post_init__(self):
        if len(self.directions) != len(self.labels):
            raise ValueError("one label per direction required")
        for d in self.directions:
            if d.basis != self.base.basis:
                raise ValueError("all directions must share the base basis")
        object.__setattr__(self, "directions", tuple(self.directions))
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def k(self) -> int:
        return len(self.directions)


def _require_quadratic(spec: BasisSpec) -> None:
    if spec.kind != "quadratic" or spec.n_states != 3 or spec.stencil_size != 5:
        raise ValueError("energy null-space directions are defined in the quadratic RSW basis")


def _energy_trade_directions(params: RswParams, spec: BasisSpec) -> list[LdoCoefficients]:
    g = params.pressure_coef
    u_c = stencil_entry_index("u", "C")
    v_c = stencil_entry_index("v", "C")
    h_c = stencil_entry_index("eta", "C")
    # (-u^2/2 - g eta, -uv/2, eta u)
    b1 = np.zeros((spec.q, 3))
    b1[quad_pair_index(u_c, u_c), 0] = -0.5
    b1[quad_linear_index(h_c), 0] = -g
    b1[quad_pair_index(u_c, v_c), 1] = -0.5
    b1[quad_pair_index(u_c, h_c), 2] = 1.0
    # (-uv/2, -v^2/2 - g eta, eta v)
    b2 = np.zeros((spec.q, 3))
    b2[quad_pair_index(u_c, v_c), 0] = -0.5
    b2[quad_pair_index(v_c, v_c), 1] = -0.5
    b2[quad_linear_index(h_c), 1] = -g
    b2[quad_pair_index(v_c, h_c), 2] = 1.0
    return [LdoCoefficients(spec, b1), LdoCoefficients(spec, b2)]


def energy_nullspace_basis(
    params: RswParams, spec: BasisSpec, dx: float = 1.0
) -> PerturbationSubspace:
    """All 18 energy-conserving directions around the reference operator.

    Directions 1 and 2 trade kinetic against potential energy; directions
    3..18 are (-v, u, 0) times 1 and times each of the 15 stencil entries.
    """
    _require_quadratic(spec)
    directions = _energy_trade_directions(params, spec)
    labels = ["lambda1", "lambda2"]
    u_c = stencil_entry_index("u", "C")
    v_c = stencil_entry_index("v", "C")
    b = np.zeros((spec.q, 3))
    b[quad_linear_index(v_c), 0] = -1.0
    b[quad_linear_index(u_c), 1] = 1.0
    directions.append(LdoCoefficients(spec, b))
    labels.append("lambda3")
    for s in range(N_STATES * STENCIL_SIZE):
        b = np.zeros((spec.q, 3))
        b[quad_pair_index(v_c, s), 0] = -1.0
        b[quad_pair_index(u_c, s), 1] = 1.0
        directions.append(LdoCoefficients(spec, b))
        labels.append(f"lambda{s + 4}")
    base = rsw_reference_coefficients(params, dx, spec)
    return PerturbationSubspace(base, tuple(directions), tuple(labels))


def demo_subspace(params: RswParams, spec: BasisSpec, dx: float = 1.0) -> PerturbationSubspace:
    """The 2-direction kinetic/potential trade subspace used for calibration."""
    _require_quadratic(spec)
    base = rsw_reference_coefficients(params, dx, spec)
    directions = _energy_trade_directions(params, spec)
    return PerturbationSubspace(base, tuple(directions), ("lambda1", "lambda2"))


def energy_residual(delta: LdoCoefficients, stencil: np.ndarray, params: RswParams) -> float:
    """Pointwise energy-rate contribution of a perturbation at one stencil.

    Zero (to rounding) exactly when the perturbation leaves the local energy
    density eta*(E_K + E_P) unchanged in time.
    """
    _require_quadratic(delta.basis)
    stencil = np.asarray(stencil, dtype=np.float64)
    u = stencil[stencil_entry_index("u", "C")]
    v = stencil[stencil_entry_index("v", "C")]
    eta = stencil[stencil_entry_index("eta", "C")]
    t = eval_features(stencil, delta.basis) @ delta.p
    g = params.pressure_coef
    return float((0.5 * (u * u + v * v) + g * eta) * t[2] + eta * u * t[0] + eta * v * t[1])


def perturbed_ldo(subspace: PerturbationSubspace, coords) -> LdoCoefficients:
    """base + sum_i lambda_i * direction_i."""
    lam = np.asarray(coords, dtype=np.float64).ravel()
    if lam.shape != (subspace.k,):
        raise ValueError(f"expected {subspace.k} coordinates, got {lam.shape}")
    p = subspace.base.p.copy()
    for lam_i, d in zip(lam, subspace.directions):
        p += lam_i * d.p
    return LdoCoefficients(subspace.base.basis, p)


def save_subspace(subspace: PerturbationSubspace, path) -> None:
    payload = {
        "basis": subspace.base.basis.to_dict(),
        "base": subspace.base.p.tolist(),
        "labels": list(subspace.labels),
        "directions": [d.p.tolist() for d in subspace.directions],
    }
    with open(str(path), "w") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_subspace(path) -> PerturbationSubspace:
    with open(str(path)) as fh:
        payload = json.load(fh)
    basis = BasisSpec.from_dict(payload["basis"])
    base = LdoCoefficients(basis, np.array(payload["base"]))
    directions = tuple(LdoCoefficients(basis, np.array(d)) for d in payload["directions"])
    return PerturbationSubspace(base, directions, tuple(payload["labels"]))
