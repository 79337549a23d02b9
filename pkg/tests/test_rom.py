import numpy as np
import pytest

from ldokit import Grid, SnapshotSet, StateField
from ldokit.errors import DeimSelectionError
from ldokit.ldo_features import (
    LdoCoefficients,
    apply_ldo,
    integrate_ldo,
    rsw_reference_coefficients,
)
from ldokit.rom import (
    build_rom,
    compute_pod,
    deim_select,
    flop_estimate,
    integrate_rom,
    load_rom,
    reconstruct,
    save_rom,
    stack_snapshots,
)
from ldokit.rsw_dynamics import make_initial_condition

from conftest import random_field


def _random_snapshots(grid, n_snap, seed=0):
    rng = np.random.default_rng(seed)
    return SnapshotSet(grid, 0.1, rng.standard_normal((n_snap, 3, grid.ny, grid.nx)))


def test_pod_rank_one_data(small_grid):
    w = random_field(small_grid, seed=1).values
    sset = SnapshotSet(small_grid, 0.1, np.tile(w, (6, 1, 1, 1)))
    basis = compute_pod(sset, 1)
    mode = basis.modes[:, 0]
    direction = w.ravel() / np.linalg.norm(w.ravel())
    assert min(np.linalg.norm(mode - direction), np.linalg.norm(mode + direction)) < 1e-12
    assert basis.singular_values[0] == pytest.approx(np.linalg.norm(w) * np.sqrt(6))


def test_pod_orthonormal(small_grid):
    basis = compute_pod(_random_snapshots(small_grid, 10), 6)
    gram = basis.modes.T @ basis.modes
    np.testing.assert_allclose(gram, np.eye(6), atol=1e-10)


def test_pod_eckart_young(small_grid):
    # Projection residual energy equals the sum of squared discarded
    # singular values; the oracle is an independent full SVD.
    sset = _random_snapshots(small_grid, 12, seed=5)
    m = 5
    basis = compute_pod(sset, m)
    matrix = stack_snapshots(sset)
    residual = matrix - basis.modes @ (basis.modes.T @ matrix)
    direct = np.sum(residual**2)
    all_sv = np.linalg.svd(matrix, compute_uv=False)
    np.testing.assert_allclose(direct, np.sum(all_sv[m:] ** 2), rtol=1e-10)
    np.testing.assert_allclose(basis.singular_values, all_sv[:m], rtol=1e-12)


def test_pod_m_exceeds_snapshots(small_grid):
    with pytest.raises(ValueError, match="exceeds snapshot count"):
        compute_pod(_random_snapshots(small_grid, 4), 5)


def test_deim_standard_basis_vector():
    u = np.zeros((30, 1))
    u[17, 0] = 1.0
    assert deim_select(u, 1).tolist() == [17]


def test_deim_indices_distinct():
    rng = np.random.default_rng(2)
    u = np.linalg.qr(rng.standard_normal((60, 12)))[0]
    idx = deim_select(u, 12)
    assert len(set(idx.tolist())) == 12


def test_deim_exact_on_span():
    rng = np.random.default_rng(3)
    u = np.linalg.qr(rng.standard_normal((80, 10)))[0]
    idx = deim_select(u, 10)
    interp = u @ np.linalg.inv(u[idx, :])
    for _ in range(100):
        v = u @ rng.standard_normal(10)
        np.testing.assert_allclose(interp @ v[idx], v, atol=1e-10)


def test_deim_singular_system_reports_step():
    u = np.zeros((10, 2))
    u[3, 0] = 1.0
    u[3, 1] = 1.0  # second column interpolates exactly at the first index
    with pytest.raises(DeimSelectionError) as exc:
        deim_select(u, 2)
    assert exc.value.step == 1


def _linear_ldo(quad, scale=0.05):
    # Constant plus center-linear terms: dynamics stay inside the span of any
    # basis containing the trajectory, which makes reduction exact.
    p = np.zeros((quad.q, 3))
    p[0] = (0.01, -0.02, 0.015)
    p[1 + 0, 0] = -scale   # u_C in du/dt
    p[1 + 5, 1] = -scale   # v_C in dv/dt
    p[1 + 10, 2] = -scale  # eta_C in deta/dt
    return LdoCoefficients(quad, p)


@pytest.fixture(scope="module")
def exact_case(quad):
    grid = Grid(8, 8)
    ldo = _linear_ldo(quad)
    ic = random_field(grid, seed=7, scale=0.5)
    traj = integrate_ldo(ldo, ic, dt=0.05, n_steps=100)
    full = SnapshotSet(grid, traj.dt, np.concatenate([ic.values[None], traj.data]))
    m = len(full)
    rom = build_rom(full, ldo, m=m, d=m)
    return grid, ldo, ic, traj, rom


def test_build_rom_shapes(exact_case):
    _, _, _, _, rom = exact_case
    assert rom.r_matrix.shape == (rom.m, rom.d)
    assert len(set(rom.deim_indices.tolist())) == rom.d
    assert rom.gather_cells.size <= 5 * rom.d


def test_rom_rhs_matches_galerkin(exact_case, quad):
    # With state in span(phi) and tendency in span(U), interpolation is exact
    # and the reduced right-hand side equals the projected full tendency.
    grid, ldo, ic, traj, rom = exact_case
    from ldokit.rom import _RomKernel

    kernel = _RomKernel(rom, ldo)
    x = StateField(grid, traj.data[10])
    c = rom.phi.modes.T @ x.values.ravel()
    rhs, _ = kernel.rhs(c, grid.dx)
    expected = rom.phi.modes.T @ apply_ldo(ldo, x).values.ravel()
    np.testing.assert_allclose(rhs, expected, atol=1e-8)


def test_rom_exact_reproduction(exact_case):
    grid, ldo, ic, traj, rom = exact_case
    coords, recon = integrate_rom(rom, ic, dt=0.05, n_steps=100)
    assert coords.shape == (100, rom.m)
    np.testing.assert_allclose(recon.data, traj.data, atol=1e-6)


def test_rom_constant_snapshots_zero_ldo(quad, small_grid):
    w = random_field(small_grid, seed=11).values
    sset = SnapshotSet(small_grid, 0.1, np.tile(w, (4, 1, 1, 1)))
    rom = build_rom(sset, LdoCoefficients.zeros(quad), m=1, d=1)
    coords, recon = integrate_rom(rom, StateField(small_grid, w), dt=0.1, n_steps=5)
    assert np.max(np.abs(coords - coords[0])) < 1e-12
    np.testing.assert_allclose(recon.data[-1], w, atol=1e-10)


def test_rom_base_model_eta_error(params, quad):
    # Reduced reconstruction of the training dynamics stays within a few
    # percent relative eta error over the training window.
    grid = Grid(30, 30)
    coeffs = rsw_reference_coefficients(params, grid.dx, quad)
    ic = make_initial_condition(grid, "gaussian_bump", amplitude=0.75, offset=1.0)
    dt = 5e-5
    snaps = integrate_ldo(coeffs, ic, dt, 1000, record_every=10)
    rom = build_rom(snaps, coeffs, m=25, d=60)
    full = integrate_ldo(coeffs, ic, dt, 1000, record_every=1000)
    _, recon = integrate_rom(rom, ic, dt, 1000, record_every=1000)
    rel = np.linalg.norm(recon.data[-1][2] - full.data[-1][2]) / np.linalg.norm(full.data[-1][2])
    assert rel < 0.05


def test_rom_substituted_coefficients_requires_same_basis(exact_case):
    from ldokit.ldo_features import diffop_basis

    _, _, ic, _, rom = exact_case
    other = LdoCoefficients.zeros(diffop_basis())
    with pytest.raises(ValueError, match="basis"):
        integrate_rom(rom, ic, dt=0.05, n_steps=2, coeffs=other)


def test_build_rom_warns_small_d(quad, small_grid):
    sset = _random_snapshots(small_grid, 10, seed=13)
    with pytest.warns(UserWarning, match="interpolation may limit accuracy"):
        build_rom(sset, _linear_ldo(quad), m=5, d=3)


def test_flop_estimate_paper_configuration():
    full, reduced = flop_estimate(10_000, 136, n_states=3, stencil_size=5,
                                  n_modes=30, n_deim=105)
    assert 1e6 <= full < 1e7
    assert 1e4 <= reduced < 1e5
    assert 50 <= full / reduced <= 200


def test_rom_roundtrip(tmp_path, exact_case):
    grid, ldo, ic, traj, rom = exact_case
    save_rom(rom, tmp_path / "model")
    back = load_rom(tmp_path / "model")
    np.testing.assert_array_equal(back.phi.modes, rom.phi.modes)
    np.testing.assert_array_equal(back.deim_indices, rom.deim_indices)
    np.testing.assert_array_equal(back.r_matrix, rom.r_matrix)
    np.testing.assert_array_equal(back.ldo.p, rom.ldo.p)
    assert back.grid == rom.grid
    c1, r1 = integrate_rom(rom, ic, dt=0.05, n_steps=10)
    c2, r2 = integrate_rom(back, ic, dt=0.05, n_steps=10)
    np.testing.assert_array_equal(c1, c2)


def test_reconstruct_shape(exact_case):
    grid, _, _, _, rom = exact_case
    x = reconstruct(rom, np.zeros(rom.m))
    assert x.shape == (3, grid.ny, grid.nx)
