import numpy as np
import pytest

from ldokit import Grid, RswParams, StateField
from ldokit.errors import BlowUpError
from ldokit.rsw_dynamics import (
    convergence_study,
    energy_density,
    fourier_random_ic,
    gaussian_bump_ic,
    integrate_rsw,
    make_initial_condition,
    rsw_tendency,
    step_euler,
    step_rk4,
)

from conftest import random_field


def test_params_validation():
    with pytest.raises(ValueError):
        RswParams(F=-1.0)
    with pytest.raises(ValueError):
        RswParams(epsilon=0.0)
    assert RswParams(1000.0, 0.05).pressure_coef == pytest.approx(0.6324555320336758, rel=1e-14)


def test_tendency_zero_on_rest_state(params):
    fld = StateField.constant(Grid(12, 12), eta=1.3)
    np.testing.assert_array_equal(rsw_tendency(fld, params).values, 0.0)


def test_tendency_uniform_velocity(params):
    # Uniform u=1 has no gradients: only rotation acts, dv/dt = u/eps = 20.
    fld = StateField.constant(Grid(10, 10), u=1.0, eta=1.0)
    t = rsw_tendency(fld, params)
    np.testing.assert_allclose(t.u, 0.0, atol=1e-14)
    np.testing.assert_allclose(t.v, 20.0, rtol=1e-14)
    np.testing.assert_allclose(t.eta, 0.0, atol=1e-14)


def test_tendency_linear_eta_slope(params):
    # eta with unit slope in x drives du/dt = -F^(-1/2)/eps at interior points
    # (central difference is exact on linear data; wrap columns see the jump).
    grid = Grid(16, 8)
    vals = np.zeros((3, grid.ny, grid.nx))
    vals[2] = np.tile(np.arange(grid.nx, dtype=float) * grid.dx, (grid.ny, 1))
    t = rsw_tendency(StateField(grid, vals), params)
    interior = t.u[:, 1:-1]
    np.testing.assert_allclose(interior, -0.6324555320336758, rtol=1e-12)
    np.testing.assert_allclose(t.v, 0.0, atol=1e-14)
    np.testing.assert_allclose(t.eta, 0.0, atol=1e-14)


def test_steps_fixed_point(params):
    fld = StateField.constant(Grid(8, 8), eta=2.0)
    for stepper in (step_euler, step_rk4):
        np.testing.assert_array_equal(stepper(fld, params, 0.01).values, fld.values)


def test_euler_step_uniform_rotation(params):
    fld = StateField.constant(Grid(8, 8), u=1.0, eta=1.0)
    out = step_euler(fld, params, 0.01)
    np.testing.assert_allclose(out.v, 0.2, rtol=1e-14)
    np.testing.assert_allclose(out.u, 1.0, rtol=1e-14)


def test_rk4_matches_analytic_rotation(params):
    # Uniform velocity fields: advection and pressure vanish, so the exact
    # dynamics reduce to rotation at rate 1/eps, solvable in closed form.
    grid = Grid(8, 8)
    u0, v0 = 0.7, -0.3
    omega = 1.0 / params.epsilon

    def analytic(t):
        return (u0 * np.cos(omega * t) - v0 * np.sin(omega * t),
                u0 * np.sin(omega * t) + v0 * np.cos(omega * t))

    errs = []
    for dt in (2e-3, 1e-3):
        out = step_rk4(StateField.constant(grid, u=u0, v=v0, eta=1.0), params, dt)
        ua, va = analytic(dt)
        errs.append(max(abs(out.u[0, 0] - ua), abs(out.v[0, 0] - va)))
    ratio = errs[0] / errs[1]
    assert 24 < ratio < 40  # fifth-order local error halves by ~2^5


def test_euler_difference_quotient_is_tendency(params, small_grid):
    fld = random_field(small_grid, seed=1, scale=0.3)
    dt = 1e-3
    quotient = (step_euler(fld, params, dt).values - fld.values) / dt
    np.testing.assert_allclose(quotient, rsw_tendency(fld, params).values, atol=1e-10)


def test_rk4_difference_quotient_first_order(params, small_grid):
    # (step(X,dt)-X)/dt approaches the tendency with O(dt) error; Richardson
    # halving should cut the defect roughly in half.
    fld = random_field(small_grid, seed=2, scale=0.3)
    t0 = rsw_tendency(fld, params).values
    defect = []
    for dt in (1e-3, 5e-4, 2.5e-4):
        q = (step_rk4(fld, params, dt).values - fld.values) / dt
        defect.append(np.max(np.abs(q - t0)))
    assert defect[0] / defect[1] == pytest.approx(2.0, rel=0.2)
    assert defect[1] / defect[2] == pytest.approx(2.0, rel=0.2)


def test_energy_density_values(params):
    e = energy_density(0.0, 0.0, 0.0, params)
    assert e.e_k == 0.0
    e = energy_density(3.0, 4.0, 0.0, params)
    assert e.e_k == pytest.approx(12.5)
    e = energy_density(0.0, 0.0, 1.0, params)
    assert e.e_p == pytest.approx(0.31622776601683794, rel=1e-14)


def test_energy_density_scaling(params):
    rng = np.random.default_rng(0)
    u, v, eta = rng.standard_normal(3)
    e1 = energy_density(u, v, eta, params)
    e2 = energy_density(2 * u, 2 * v, 2 * eta, params)
    assert e2.e_p == pytest.approx(2 * e1.e_p, rel=1e-14)
    assert e2.e_k == pytest.approx(4 * e1.e_k, rel=1e-14)


def test_gaussian_bump_degenerate():
    grid = Grid(10, 10)
    fld = gaussian_bump_ic(grid, amplitude=0.0, offset=0.7)
    np.testing.assert_array_equal(fld.u, 0.0)
    np.testing.assert_array_equal(fld.v, 0.0)
    np.testing.assert_allclose(fld.eta, 0.7)


def test_fourier_ic_deterministic():
    grid = Grid(12, 12)
    a = fourier_random_ic(grid, seed=5, n_modes=4, amplitude=0.2)
    b = fourier_random_ic(grid, seed=5, n_modes=4, amplitude=0.2)
    np.testing.assert_array_equal(a.values, b.values)
    c = fourier_random_ic(grid, seed=6, n_modes=4, amplitude=0.2)
    assert np.max(np.abs(a.values - c.values)) > 0


def test_fourier_ic_amplitude_bound():
    grid = Grid(16, 16)
    n_modes, amplitude, offset = 5, 0.3, 1.0
    fld = fourier_random_ic(grid, seed=1, n_modes=n_modes, amplitude=amplitude, eta_offset=offset)
    assert np.max(np.abs(fld.u)) <= n_modes * amplitude
    assert np.max(np.abs(fld.v)) <= n_modes * amplitude
    assert np.max(np.abs(fld.eta)) <= n_modes * amplitude + offset


def test_make_initial_condition_dispatch():
    grid = Grid(8, 8)
    assert make_initial_condition(grid, "gaussian_bump").eta.max() > 1.0
    with pytest.raises(ValueError):
        make_initial_condition(grid, "nope")


def test_tendency_translation_equivariance(params, small_grid):
    fld = random_field(small_grid, seed=8, scale=0.4)
    t = rsw_tendency(fld, params)
    t_shifted = rsw_tendency(fld.shifted(2, 3), params)
    np.testing.assert_allclose(t.shifted(2, 3).values, t_shifted.values, atol=1e-13)


def test_integrate_records_and_dt(params):
    grid = Grid(8, 8)
    ic = StateField.constant(grid, eta=1.0)
    sset = integrate_rsw(ic, params, dt=1e-3, n_steps=10, record_every=2)
    assert len(sset) == 5
    assert sset.dt == pytest.approx(2e-3)
    np.testing.assert_array_equal(sset.data[-1], ic.values)  # fixed point


def test_integrate_blowup_reports_step(params):
    grid = Grid(10, 10)
    ic = gaussian_bump_ic(grid, amplitude=0.75, offset=1.0)
    with pytest.raises(BlowUpError) as exc:
        integrate_rsw(ic, params, dt=0.2, n_steps=500)
    assert 0 < exc.value.step <= 500


def _decay_tendency(values):
    return -values


def test_convergence_euler_linear_decay(params, small_grid):
    # Three levels keep the tested steps well above the dt0/64 reference, so
    # the reference's own first-order error does not tilt the fit.
    ic = StateField.constant(small_grid, u=1.0, v=0.5, eta=2.0)
    res = convergence_study(ic, params, dt0=0.02, horizon_time=1.0, levels=3,
                            scheme="euler", tendency=_decay_tendency)
    assert res.slope == pytest.approx(1.0, abs=0.05)


def test_convergence_rk4_linear_decay(params, small_grid):
    ic = StateField.constant(small_grid, u=1.0, v=0.5, eta=2.0)
    res = convergence_study(ic, params, dt0=0.2, horizon_time=1.0, levels=4,
                            scheme="rk4", tendency=_decay_tendency)
    assert res.slope == pytest.approx(4.0, abs=0.3)


def test_convergence_horizon_must_divide(params, small_grid):
    ic = StateField.constant(small_grid, eta=1.0)
    with pytest.raises(ValueError):
        convergence_study(ic, params, dt0=0.3, horizon_time=1.0, levels=3)
