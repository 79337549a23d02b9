"""Reference rotating shallow water dynamics on the periodic grid.

Second-order central differences on the 5-point stencil discretize

    du/dt = -(u.grad)u - v/eps - g d(eta)/dx
    dv/dt = -(u.grad)v + u/eps - g d(eta)/dy
    d(eta)/dt = -div(eta u) - g div(u),        g = F^(-1/2) / eps

with div(eta u) expanded as eta div(u) + u.grad(eta) so every term is a
center value times a central difference. That keeps the discrete tendency
exactly representable in both stencil feature bases.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_grid import Grid, SnapshotSet, StateField
from .errors import BLOWUP_THRESHOLD, BlowUpError, NonFiniteStateError


@dataclass(frozen=True)
class RswParams:
    """Froude-like parameter F and Rossby-like parameter epsilon."""

    F: float = 1000.0
    epsilon: float = 0.05

    def __post_init__(self):
        if not self.F > 0:
            raise ValueError(f"F must be positive, got {self.F}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")

    @property
    def pressure_coef(self) -> float:
        """The combination F^(-1/2)/epsilon multiplying pressure terms."""
        return self.F ** (-0.5) / self.epsilon


@dataclass(frozen=True)
class EnergyDensity:
    e_k: np.ndarray | float
    e_p: np.ndarray | float


def energy_density(u, v, eta, params: RswParams) -> EnergyDensity:
    """Kinetic density (u^2+v^2)/2 and potential density g*eta/2."""
    return EnergyDensity(0.5 * (np.asarray(u) ** 2 + np.asarray(v) ** 2),
                         0.5 * params.pressure_coef * np.asarray(eta))


def central_gradient(a: np.ndarray, dx: float) -> tuple[np.ndarray, np.ndarray]:
    """(d/dx, d/dy) by periodic central differences; a has shape (ny, nx)."""
    ax = (np.roll(a, -1, axis=1) - np.roll(a, 1, axis=1)) / (2.0 * dx)
    ay = (np.roll(a, -1, axis=0) - np.roll(a, 1, axis=0)) / (2.0 * dx)
    return ax, ay


def central_divergence(ax: np.ndarray, ay: np.ndarray, dx: float) -> np.ndarray:
    gx, _ = central_gradient(ax, dx)
    _, gy = central_gradient(ay, dx)
    return gx + gy


def rsw_tendency_values(values: np.ndarray, params: RswParams, dx: float) -> np.ndarray:
    u, v, eta = values
    ux, uy = central_gradient(u, dx)
    vx, vy = central_gradient(v, dx)
    ex, ey = central_gradient(eta, dx)
    g = params.pressure_coef
    inv_eps = 1.0 / params.epsilon
    div = ux + vy
    du = -(u * ux + v * uy) - inv_eps * v - g * ex
    dv = -(u * vx + v * vy) + inv_eps * u - g * ey
    de = -(eta * div + u * ex + v * ey) - g * div
    return np.stack([du, dv, de])


def rsw_tendency(fld: StateField, params: RswParams) -> StateField:
    """Time derivative of (u, v, eta) at every grid point."""
    if not np.all(np.isfinite(fld.values)):
        raise NonFiniteStateError("tendency requires a finite state")
    return StateField(fld.grid, rsw_tendency_values(fld.values, params, fld.grid.dx))


def _euler_step(x: np.ndarray, tendency, dt: float) -> np.ndarray:
    return x + dt * tendency(x)


def _rk4_step(x: np.ndarray, tendency, dt: float) -> np.ndarray:
    k1 = tendency(x)
    k2 = tendency(x + 0.5 * dt * k1)
    k3 = tendency(x + 0.5 * dt * k2)
    k4 = tendency(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


_STEPPERS = {"euler": _euler_step, "rk4": _rk4_step}


def step_euler(fld: StateField, params: RswParams, dt: float) -> StateField:
    """One forward-Euler step X + dt*f(X)."""
    return _single_step(fld, params, dt, "euler")


def step_rk4(fld: StateField, params: RswParams, dt: float) -> StateField:
    """One classical RK4 step (four tendency evaluations)."""
    return _single_step(fld, params, dt, "rk4")


def _single_step(fld: StateField, params: RswParams, dt: float, scheme: str) -> StateField:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    dx = fld.grid.dx
    x = _STEPPERS[scheme](fld.values, lambda a: rsw_tendency_values(a, params, dx), dt)
    if not np.all(np.isfinite(x)):
        raise BlowUpError(1, "single step produced a non-finite state")
    return StateField(fld.grid, x)


def integrate_rsw(
    ic: StateField,
    params: RswParams,
    dt: float,
    n_steps: int,
    record_every: int = 1,
    scheme: str = "euler",
    meta: dict | None = None,
    tendency=None,
) -> SnapshotSet:
    """Integrate the RSW dynamics, recording after every ``record_every`` steps.

    The returned set holds ``n_steps // record_every`` snapshots at spacing
    ``dt * record_every`` (the initial condition is not stored). Raises
    :class:`BlowUpError` with the step index when a value exceeds
    ``BLOWUP_THRESHOLD`` or turns non-finite.
    """
    if scheme not in _STEPPERS:
        raise ValueError(f"unknown scheme {scheme!r}")
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if n_steps < record_every:
        raise ValueError("n_steps must be at least record_every to record a snapshot")
    dx = ic.grid.dx
    if tendency is None:
        tendency = lambda a: rsw_tendency_values(a, params, dx)  # noqa: E731
    stepper = _STEPPERS[scheme]
    x = ic.values.copy()
    records = []
    for step in range(1, n_steps + 1):
        x = stepper(x, tendency, dt)
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > BLOWUP_THRESHOLD:
            raise BlowUpError(step)
        if step % record_every == 0:
            records.append(x.copy())
    base_meta = {"integrator": scheme, "dt": dt, "n_steps": n_steps, "record_every": record_every}
    if meta:
        base_meta.update(meta)
    return SnapshotSet(ic.grid, dt * record_every, np.stack(records), base_meta)


def gaussian_bump_ic(
    grid: Grid, amplitude: float = 0.75, offset: float = 1.0, width: float | None = None
) -> StateField:
    """Zero velocity and a Gaussian eta bump centered mid-domain."""
    if width is None:
        width = 0.1 * grid.nx * grid.dx
    x = (np.arange(grid.nx) - (grid.nx - 1) / 2.0) * grid.dx
    y = (np.arange(grid.ny) - (grid.ny - 1) / 2.0) * grid.dx
    xx, yy = np.meshgrid(x, y)
    vals = np.zeros((3, grid.ny, grid.nx))
    vals[2] = offset + amplitude * np.exp(-(xx**2 + yy**2) / (2.0 * width**2))
    return StateField(grid, vals)


def fourier_random_ic(
    grid: Grid,
    seed: int,
    n_modes: int = 4,
    amplitude: float = 0.1,
    eta_offset: float = 1.0,
) -> StateField:
    """Seeded superposition of the lowest-wavenumber periodic Fourier modes.

    Each field gets ``n_modes`` cosine modes with amplitudes drawn uniformly
    from [0, amplitude] and uniform random phases, so every value is bounded
    by ``n_modes * amplitude`` (plus the eta offset).
    """
    if n_modes < 1:
        raise ValueError("n_modes must be at least 1")
    waves = sorted(
        ((kx, ky) for kx in range(-3, 4) for ky in range(-3, 4) if (kx, ky) != (0, 0)),
        key=lambda w: (w[0] ** 2 + w[1] ** 2, w[0], w[1]),
    )
    if n_modes > len(waves):
        raise ValueError(f"n_modes must be at most {len(waves)}")
    rng = np.random.default_rng(seed)
    fx = np.arange(grid.nx) / grid.nx
    fy = np.arange(grid.ny) / grid.ny
    xx, yy = np.meshgrid(fx, fy)
    vals = np.zeros((3, grid.ny, grid.nx))
    for n in range(3):
        for kx, ky in waves[:n_modes]:
            amp = rng.uniform(0.0, amplitude)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            vals[n] += amp * np.cos(2.0 * np.pi * (kx * xx + ky * yy) + phase)
    vals[2] += eta_offset
    return StateField(grid, vals)


def make_initial_condition(grid: Grid, kind: str, **kwargs) -> StateField:
    if kind == "gaussian_bump":
        return gaussian_bump_ic(grid, **kwargs)
    if kind == "fourier_random":
        return fourier_random_ic(grid, **kwargs)
    raise ValueError(f"unknown initial-condition kind {kind!r}")


@dataclass
class ConvergenceResult:
    rows: list[tuple[float, float]]
    slope: float


def convergence_study(
    ic: StateField,
    params: RswParams,
    dt0: float,
    horizon_time: float,
    levels: int,
    scheme: str = "euler",
    tendency=None,
) -> ConvergenceResult:
    """Terminal-state error against a fine-dt reference over halved timesteps.

    Integrates to ``horizon_time`` with dt0/2^k for k = 0..levels-1 and with a
    reference timestep of dt0/64 (refined further if a requested level already
    reaches it), then returns the (dt, L2 error) rows and the least-squares
    slope of log(error) against log(dt).
    """
    if levels < 3:
        raise ValueError("need at least 3 levels to fit a slope")
    n0 = horizon_time / dt0
    if abs(n0 - round(n0)) > 1e-9 * max(1.0, abs(n0)):
        raise ValueError("horizon_time must be an integer multiple of dt0")
    n0 = int(round(n0))
    dx = ic.grid.dx
    if tendency is None:
        tendency = lambda a: rsw_tendency_values(a, params, dx)  # noqa: E731
    stepper = _STEPPERS[scheme]

    def run(divider: int, label: str) -> np.ndarray:
        x = ic.values.copy()
        dt = dt0 / divider
        for step in range(1, n0 * divider + 1):
            x = stepper(x, tendency, dt)
            if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > BLOWUP_THRESHOLD:
                raise BlowUpError(step, f"convergence level {label} (dt={dt:g}) blew up at step {step}")
        return x

    ref_div = 64
    if 2 ** (levels - 1) >= ref_div:
        ref_div = 4 * 2 ** (levels - 1)
    x_ref = run(ref_div, "reference")
    rows = []
    for k in range(levels):
        x_k = run(2**k, str(k))
        err = float(np.sqrt(np.sum((x_k - x_ref) ** 2) * dx**2))
        rows.append((dt0 / 2**k, err))
    logs = np.log([r[0] for r in rows]), np.log([r[1] for r in rows])
    slope = float(np.polyfit(logs[0], logs[1], 1)[0])
    return ConvergenceResult(rows, slope)
