"""Fitting local-operator coefficients from snapshot data.

Targets are forward differences (X_{t+1} - X_t)/dT at each grid point; the
design matrix holds the feature vector of the stencil at time t. Fits:

* plain least squares through column-pivoted QR on the design matrix itself
  (never the normal-equations product, which would square an already poor
  condition number),
* LASSO by cyclic coordinate descent with soft thresholding on standardized
  columns, the constant feature acting as an unpenalized intercept,
* constrained fits that search only a perturbation subspace around a known
  base operator.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .core_grid import SnapshotSet, stencil_matrix
from .energy_constraints import PerturbationSubspace
from .errors import DegenerateDirectionsError
from .ldo_features import (
    BasisSpec,
    LdoCoefficients,
    apply_ldo_values,
    eval_features_matrix,
)


@dataclass
class RegressionSystem:
    """Design matrix (N_S x Q), targets (N_S x 3), and their provenance.

    ``row_groups`` tags each row with the experiment it came from so
    cross validation can hold out whole experiments.
    """

    psi: np.ndarray
    y: np.ndarray
    basis: BasisSpec
    dx: float = 1.0
    meta: dict = field(default_factory=dict)
    row_groups: np.ndarray | None = None

    def __post_init__(self):
        if self.psi.shape[0] != self.y.shape[0]:
            raise ValueError("design and target row counts differ")
        if self.psi.shape[1] != self.basis.q:
            raise ValueError(f"design has {self.psi.shape[1]} columns, basis expects {self.basis.q}")
        if self.row_groups is not None and self.row_groups.shape[0] != self.psi.shape[0]:
            raise ValueError("row_groups length must match row count")

    @property
    def n_rows(self) -> int:
        return self.psi.shape[0]


@dataclass
class FitReport:
    """Fitted coefficients plus solver diagnostics.

    ``coefficients`` is an :class:`LdoCoefficients` for full fits or a plain
    coordinate vector for constrained (subspace) fits.
    """

    coefficients: object
    residual_norm: float
    method: str
    max_abs_coef_error: float | None = None
    metadata: dict = field(default_factory=dict)


def assemble_regression(
    sets: list[SnapshotSet],
    spec: BasisSpec,
    sample_stride: int = 1,
    time_stride: int = 1,
) -> RegressionSystem:
    """Stack feature rows and forward-difference targets from snapshot sets.

    ``sample_stride`` keeps every n-th grid point (flattened order) and
    ``time_stride`` every n-th snapshot pair; both exist to keep desk-scale
    fits fast. All sets must share dt and dx.
    """
    if not sets:
        raise ValueError("at least one snapshot set required")
    if sample_stride < 1 or time_stride < 1:
        raise ValueError("strides must be >= 1")
    dt = sets[0].dt
    dx = sets[0].grid.dx
    for s in sets:
        if abs(s.dt - dt) > 1e-12 * max(dt, s.dt):
            raise ValueError(f"snapshot dt mismatch across sets: {dt} vs {s.dt}")
        if abs(s.grid.dx - dx) > 1e-12 * max(dx, s.grid.dx):
            raise ValueError(f"grid dx mismatch across sets: {dx} vs {s.grid.dx}")
        if len(s) < 2:
            raise ValueError("each snapshot set needs at least 2 snapshots")
    psi_blocks, y_blocks, group_blocks = [], [], []
    for set_idx, s in enumerate(sets):
        data = s.data
        for t in range(0, len(s) - 1, time_stride):
            stencils = stencil_matrix(data[t])[::sample_stride]
            psi_blocks.append(eval_features_matrix(stencils, spec, dx))
            diff = (data[t + 1] - data[t]) / dt
            y_blocks.append(diff.reshape(3, -1).T[::sample_stride])
            group_blocks.append(np.full(psi_blocks[-1].shape[0], set_idx))
    psi = np.vstack(psi_blocks)
    y = np.vstack(y_blocks)
    meta = {
        "n_sets": len(sets),
        "sample_stride": sample_stride,
        "time_stride": time_stride,
        "dt": dt,
        "n_rows": psi.shape[0],
    }
    return RegressionSystem(psi, y, spec, dx, meta, row_groups=np.concatenate(group_blocks))


def _coef_error(p: np.ndarray, reference) -> float | None:
    if reference is None:
        return None
    ref = reference.p if isinstance(reference, LdoCoefficients) else np.asarray(reference)
    return float(np.max(np.abs(p - ref)))


def least_squares_fit(system: RegressionSystem, reference=None) -> FitReport:
    """Minimize ||psi P - y||_F by column-pivoted QR; reports numerical rank.

    Rank-deficient systems fall back to the minimum-norm (SVD) solution and
    the deficiency is flagged in the report metadata.
    """
    psi, y = system.psi, system.y
    n, q = psi.shape
    if n < q:
        warnings.warn(f"underdetermined fit: {n} rows for {q} coefficients", stacklevel=2)
    qmat, rmat, piv = scipy.linalg.qr(psi, mode="economic", pivoting=True)
    diag = np.abs(np.diag(rmat))
    tol = diag[0] * max(n, q) * np.finfo(float).eps if diag.size else 0.0
    rank = int(np.sum(diag > tol))
    if rank == q:
        rhs = qmat.T @ y
        p_piv = scipy.linalg.solve_triangular(rmat, rhs)
        p = np.empty_like(p_piv)
        p[piv] = p_piv
    else:
        p = scipy.linalg.lstsq(psi, y)[0]
    residual = float(np.linalg.norm(psi @ p - y))
    return FitReport(
        coefficients=LdoCoefficients(system.basis, p),
        residual_norm=residual,
        method="least_squares",
        max_abs_coef_error=_coef_error(p, reference),
        metadata={"rank": rank, "q": q, "n_rows": n, "rank_deficient": rank < q, **system.meta},
    )


def _standardize(psi: np.ndarray):
    """Center/scale columns; zero-variance columns (the intercept) drop out."""
    mean = psi.mean(axis=0)
    std = psi.std(axis=0)
    active = np.where(std > 1e-300)[0]
    active = active[active != 0]  # constant feature stays unpenalized
    xc = (psi[:, active] - mean[active]) / std[active]
    return xc, active, mean, std


def _cd_lasso(xc: np.ndarray, yc: np.ndarray, weight: float, beta: np.ndarray,
              col_sq: np.ndarray, max_iter: int, tol: float) -> tuple[np.ndarray, bool, int]:
    """Cyclic coordinate descent for 0.5*||yc - xc b||^2 + weight*||b||_1."""
    n_cols = xc.shape[1]
    r = yc - xc @ beta
    for sweep in range(1, max_iter + 1):
        max_delta = 0.0
        for j in range(n_cols):
            if col_sq[j] == 0.0:
                continue
            b_old = beta[j]
            rho = xc[:, j] @ r + col_sq[j] * b_old
            b_new = np.sign(rho) * max(abs(rho) - weight, 0.0) / col_sq[j]
            if b_new != b_old:
                r += xc[:, j] * (b_old - b_new)
                beta[j] = b_new
                max_delta = max(max_delta, abs(b_new - b_old))
        scale = max(1.0, float(np.max(np.abs(beta))) if n_cols else 1.0)
        if max_delta <= tol * scale:
            return beta, True, sweep
    return beta, False, max_iter


class _LassoSolver:
    """Standardizes a system once and solves descending-weight paths on it."""

    def __init__(self, psi: np.ndarray, y: np.ndarray):
        self.xc, self.active, self.mean, self.std = _standardize(psi)
        self.col_sq = np.einsum("ij,ij->j", self.xc, self.xc)
        self.y = y
        self.q = psi.shape[1]
        self.betas = np.zeros((len(self.active), y.shape[1]))

    def solve(self, weight: float, max_iter: int, tol: float) -> tuple[np.ndarray, bool]:
        """Full coefficient matrix at one weight, warm-started from the last."""
        p = np.zeros((self.q, self.y.shape[1]))
        converged = True
        for col in range(self.y.shape[1]):
            y_mean = self.y[:, col].mean()
            beta, ok, _ = _cd_lasso(self.xc, self.y[:, col] - y_mean, weight,
                                    self.betas[:, col], self.col_sq, max_iter, tol)
            converged &= ok
            p[self.active, col] = beta / self.std[self.active]
            p[0, col] = y_mean - self.mean[self.active] @ p[self.active, col]
        return p, converged


def max_lasso_weight(system: RegressionSystem) -> float:
    """Smallest weight that zeroes every penalized coefficient."""
    xc, _, _, _ = _standardize(system.psi)
    yc = system.y - system.y.mean(axis=0)
    return float(np.max(np.abs(xc.T @ yc)))


def default_weight_grid(system: RegressionSystem, n_weights: int = 20) -> np.ndarray:
    """Log-spaced weights spanning [1e-6, 1] times the all-zero threshold."""
    top = max_lasso_weight(system)
    return np.geomspace(1e-6 * top, top, n_weights)


def lasso_fit(system: RegressionSystem, weight: float, max_iter: int = 500,
              tol: float = 1e-8, reference=None) -> FitReport:
    """LASSO fit at a fixed weight; the constant feature is never penalized."""
    if weight < 0:
        raise ValueError("weight must be nonnegative")
    p, converged = _LassoSolver(system.psi, system.y).solve(weight, max_iter, tol)
    residual = float(np.linalg.norm(system.psi @ p - system.y))
    if not converged:
        warnings.warn(f"lasso did not converge within {max_iter} sweeps", stacklevel=2)
    return FitReport(
        coefficients=LdoCoefficients(system.basis, p),
        residual_norm=residual,
        method="lasso",
        max_abs_coef_error=_coef_error(p, reference),
        metadata={"weight": weight, "converged": converged,
                  "nonzeros": int(np.sum(np.abs(p) > 0)), **system.meta},
    )


def _cv_folds(system: RegressionSystem, folds: int, seed: int, by_group: bool) -> list[np.ndarray]:
    if by_group:
        if system.row_groups is None:
            raise ValueError("system carries no row groups; assemble from snapshot sets")
        groups = np.unique(system.row_groups)
        if groups.size < 2:
            raise ValueError("group cross validation needs at least 2 experiments")
        return [np.nonzero(system.row_groups == g)[0] for g in groups]
    rng = np.random.default_rng(seed)
    return np.array_split(rng.permutation(system.n_rows), folds)


def lasso_cv(system: RegressionSystem, weight_grid=None, folds: int = 5, seed: int = 0,
             by_group: bool = False, max_iter: int = 500, tol: float = 1e-8,
             reference=None) -> FitReport:
    """Pick the LASSO weight by cross validation, then refit on all rows.

    The selected weight minimizes the mean held-out squared residual over a
    log-spaced grid. Folds are a seeded random row partition by default;
    ``by_group=True`` holds out whole experiments instead, which is the
    honest split when rows within one run share systematic structure.
    """
    if folds < 2:
        raise ValueError("need at least 2 folds")
    weights = np.sort(np.asarray(weight_grid if weight_grid is not None
                                 else default_weight_grid(system)))[::-1]
    fold_ids = _cv_folds(system, folds, seed, by_group)
    cv_mse = np.zeros(len(weights))
    for hold in fold_ids:
        mask = np.ones(system.n_rows, dtype=bool)
        mask[hold] = False
        solver = _LassoSolver(system.psi[mask], system.y[mask])
        for i, w in enumerate(weights):
            p, _ = solver.solve(w, max_iter, tol)
            res = system.psi[hold] @ p - system.y[hold]
            cv_mse[i] += float(np.sum(res**2)) / hold.size
    cv_mse /= len(fold_ids)
    best = int(np.argmin(cv_mse))
    report = lasso_fit(system, float(weights[best]), max_iter, tol, reference)
    report.method = "lasso_cv"
    report.metadata.update({
        "cv_folds": len(fold_ids),
        "cv_seed": seed,
        "cv_by_group": by_group,
        "weight_grid": [float(w) for w in weights],
        "cv_mse": [float(m) for m in cv_mse],
    })
    return report


def constrained_fit(
    sets: list[SnapshotSet],
    subspace: PerturbationSubspace,
    sample_stride: int = 1,
    time_stride: int = 1,
) -> FitReport:
    """Least-squares coordinates of the data within a perturbation subspace.

    Design column i holds the tendency contribution of direction i at every
    retained sample point and state; the target is the forward-difference
    tendency minus the base operator's tendency at the same points.
    """
    if subspace.k == 0:
        raise DegenerateDirectionsError([], "subspace has no directions")
    if not sets:
        raise ValueError("at least one snapshot set required")
    if sample_stride < 1 or time_stride < 1:
        raise ValueError("strides must be >= 1")
    dt = sets[0].dt
    design_blocks, target_blocks = [], []
    for s in sets:
        if abs(s.dt - dt) > 1e-12 * max(dt, s.dt):
            raise ValueError(f"snapshot dt mismatch across sets: {dt} vs {s.dt}")
        if len(s) < 2:
            raise ValueError("each snapshot set needs at least 2 snapshots")
        dx = s.grid.dx
        for t in range(0, len(s) - 1, time_stride):
            x = s.data[t]
            fd = ((s.data[t + 1] - x) / dt).reshape(3, -1)[:, ::sample_stride]
            base = apply_ldo_values(subspace.base, x, dx).reshape(3, -1)[:, ::sample_stride]
            target_blocks.append((fd - base).ravel())
            cols = [
                apply_ldo_values(d, x, dx).reshape(3, -1)[:, ::sample_stride].ravel()
                for d in subspace.directions
            ]
            design_blocks.append(np.stack(cols, axis=1))
    design = np.vstack(design_blocks)
    target = np.concatenate(target_blocks)
    _, rmat, piv = scipy.linalg.qr(design, mode="economic", pivoting=True)
    diag = np.abs(np.diag(rmat))
    tol = diag[0] * max(design.shape) * np.finfo(float).eps if diag.size else 0.0
    rank = int(np.sum(diag > tol))
    if rank < subspace.k:
        bad = [subspace.labels[j] for j in piv[rank:]]
        raise DegenerateDirectionsError(bad)
    lam, *_ = scipy.linalg.lstsq(design, target)
    residual = float(np.linalg.norm(design @ lam - target))
    return FitReport(
        coefficients=lam,
        residual_norm=residual,
        method="constrained",
        metadata={
            "labels": list(subspace.labels),
            "rank": rank,
            "n_rows": design.shape[0],
            "sample_stride": sample_stride,
            "time_stride": time_stride,
        },
    )
