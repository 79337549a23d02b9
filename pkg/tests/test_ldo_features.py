import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ldokit import Grid, StateField
from ldokit.errors import BlowUpError
from ldokit.ldo_features import (
    BasisSpec,
    LdoCoefficients,
    apply_ldo,
    diffop_basis,
    diffop_index,
    enumerate_basis,
    eval_features,
    eval_features_matrix,
    feature_index,
    integrate_ldo,
    load_coefficients,
    quad_pair_index,
    quadratic_basis,
    rsw_reference_coefficients,
    save_coefficients,
    stencil_entry_index,
)
from ldokit.rsw_dynamics import rsw_tendency, step_euler

from conftest import random_field


def test_basis_sizes(quad):
    assert quad.q == 136  # 1 + 15 + 15*16/2
    assert diffop_basis().q == 55  # 1 + 3 + 6 + 6 + 3 + 18 + 18
    assert BasisSpec("quadratic", n_states=1, stencil_size=1).q == 3


def test_unsupported_kind():
    with pytest.raises(ValueError):
        BasisSpec("cubic")


def test_enumerate_lengths_and_bijection(quad):
    for spec in (quad, diffop_basis()):
        names = enumerate_basis(spec)
        assert len(names) == spec.q
        assert len(set(names)) == spec.q
        assert names[0] == "1"
        for idx in (0, 1, spec.q // 2, spec.q - 1):
            assert feature_index(spec, names[idx]) == idx


def test_quad_pair_index_layout(quad):
    names = enumerate_basis(quad)
    assert names[quad_pair_index(0, 0)] == "u_C*u_C"
    assert names[quad_pair_index(0, 2)] == "u_C*u_E"
    assert names[quad_pair_index(5, 3)] == "u_S*v_C"  # order-insensitive
    assert quad_pair_index(14, 14) == 135


def test_diffop_index_layout():
    spec = diffop_basis()
    names = enumerate_basis(spec)
    assert names[diffop_index("center", var=1)] == "v_C"
    assert names[diffop_index("grad", var=2, direction=0)] == "grad_x(eta)"
    assert names[diffop_index("lap", var=0, direction=1)] == "lap_y(u)"
    assert names[diffop_index("cgrad", var=0, direction=0, center=0)] == "u_C*grad_x(u)"
    assert names[diffop_index("clap", var=2, direction=1, center=1)] == "v_C*lap_y(eta)"


def test_eval_features_zero_stencil(quad):
    feats = eval_features(np.zeros(15), quad)
    assert feats[0] == 1.0
    np.testing.assert_array_equal(feats[1:], 0.0)


def test_eval_features_tiny_basis():
    spec = BasisSpec("quadratic", n_states=1, stencil_size=1)
    np.testing.assert_array_equal(eval_features(np.array([2.0]), spec), [1.0, 2.0, 4.0])


def test_eval_features_diffop_gradient():
    spec = diffop_basis()
    stencil = np.zeros(15)
    stencil[1] = -1.0  # u_W
    stencil[2] = 1.0   # u_E
    feats = eval_features(stencil, spec, dx=1.0)
    assert feats[diffop_index("grad", var=0, direction=0)] == pytest.approx(1.0)
    assert feats[diffop_index("lap", var=0, direction=0)] == pytest.approx(0.0)


def test_eval_features_quadratic_products(quad):
    rng = np.random.default_rng(0)
    s = rng.uniform(-2, 2, 15)
    feats = eval_features(s, quad)
    np.testing.assert_allclose(feats[1:16], s, rtol=1e-15)
    assert feats[quad_pair_index(3, 11)] == pytest.approx(s[3] * s[11], rel=1e-15)
    assert feats[quad_pair_index(7, 7)] == pytest.approx(s[7] ** 2, rel=1e-15)


def test_diffop_in_span_of_quadratic(quad):
    # Solve for a linear map from quadratic features to diffop features on
    # training stencils, then confirm it is exact on fresh stencils.
    spec_d = diffop_basis()
    rng = np.random.default_rng(1)
    train = rng.uniform(-2, 2, (400, 15))
    test = rng.uniform(-2, 2, (200, 15))
    dx = 0.7
    a_train = eval_features_matrix(train, quad, dx)
    b_train = eval_features_matrix(train, spec_d, dx)
    t_map, *_ = np.linalg.lstsq(a_train, b_train, rcond=None)
    resid = eval_features_matrix(test, quad, dx) @ t_map - eval_features_matrix(test, spec_d, dx)
    assert np.max(np.abs(resid)) < 1e-9


def test_apply_ldo_zero_and_constant(quad, small_grid):
    fld = random_field(small_grid, seed=2)
    zero = apply_ldo(LdoCoefficients.zeros(quad), fld)
    np.testing.assert_array_equal(zero.values, 0.0)
    p = np.zeros((quad.q, 3))
    p[0] = (1.0, -2.0, 3.0)
    const = apply_ldo(LdoCoefficients(quad, p), fld)
    np.testing.assert_allclose(const.u, 1.0)
    np.testing.assert_allclose(const.v, -2.0)
    np.testing.assert_allclose(const.eta, 3.0)


@pytest.mark.parametrize("kind", ["quadratic", "diffop"])
@pytest.mark.parametrize("dx", [1.0, 0.5])
def test_reference_coefficients_match_tendency(params, kind, dx):
    grid = Grid(16, 12, dx)
    fld = random_field(grid, seed=3, scale=0.8)
    coeffs = rsw_reference_coefficients(params, dx, BasisSpec(kind))
    np.testing.assert_allclose(
        apply_ldo(coeffs, fld).values,
        rsw_tendency(fld, params).values,
        atol=1e-12,
    )


def test_reference_coefficient_entries(params, quad):
    p_quad = rsw_reference_coefficients(params, 1.0, quad).p
    assert p_quad[0, 0] == p_quad[0, 1] == p_quad[0, 2] == 0.0  # no constant forcing
    v_c = stencil_entry_index("v", "C")
    assert p_quad[1 + v_c, 0] == pytest.approx(-20.0)  # rotation -v/eps in du/dt
    spec_d = diffop_basis()
    p_diff = rsw_reference_coefficients(params, 1.0, spec_d).p
    assert p_diff[diffop_index("cgrad", var=0, direction=0, center=0), 0] == -1.0
    assert p_diff[diffop_index("center", var=1), 0] == pytest.approx(-20.0)


@settings(max_examples=20, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 4))
def test_apply_ldo_linear_in_coefficients(a, b, seed):
    grid = Grid(6, 5)
    quad = quadratic_basis()
    fld = random_field(grid, seed=seed)
    rng = np.random.default_rng(seed + 10)
    p1 = rng.standard_normal((quad.q, 3))
    p2 = rng.standard_normal((quad.q, 3))
    combo = apply_ldo(LdoCoefficients(quad, a * p1 + b * p2), fld).values
    parts = a * apply_ldo(LdoCoefficients(quad, p1), fld).values \
        + b * apply_ldo(LdoCoefficients(quad, p2), fld).values
    np.testing.assert_allclose(combo, parts, atol=1e-11)


def test_integrate_ldo_constant_trajectory(quad, small_grid):
    ic = random_field(small_grid, seed=5)
    sset = integrate_ldo(LdoCoefficients.zeros(quad), ic, dt=0.1, n_steps=6, record_every=2)
    assert len(sset) == 3
    for t in range(3):
        np.testing.assert_array_equal(sset.data[t], ic.values)


def test_integrate_ldo_fixed_point(params, quad):
    grid = Grid(8, 8)
    coeffs = rsw_reference_coefficients(params, grid.dx, quad)
    ic = StateField.constant(grid, eta=1.0)
    sset = integrate_ldo(coeffs, ic, dt=1e-3, n_steps=5)
    np.testing.assert_allclose(sset.data[-1], ic.values, atol=1e-14)


def test_integrate_ldo_matches_step_euler(params, quad):
    grid = Grid(10, 10)
    coeffs = rsw_reference_coefficients(params, grid.dx, quad)
    ic = random_field(grid, seed=6, scale=0.2)
    sset = integrate_ldo(coeffs, ic, dt=5e-4, n_steps=50, record_every=50)
    fld = ic
    for _ in range(50):
        fld = step_euler(fld, params, 5e-4)
    np.testing.assert_allclose(sset.data[-1], fld.values, atol=1e-10)


def test_integrate_ldo_blowup(params, quad):
    # A strong energy-conserving perturbation still blows up in finite time;
    # the error carries the failing step.
    from ldokit.energy_constraints import demo_subspace, perturbed_ldo

    grid = Grid(20, 20)
    sub = demo_subspace(params, quad, grid.dx)
    wild = perturbed_ldo(sub, (2000.0, 2000.0))
    ic = random_field(grid, seed=7, scale=0.5)
    with pytest.raises(BlowUpError) as exc:
        integrate_ldo(wild, ic, dt=1e-2, n_steps=5000)
    assert exc.value.step < 5000


def test_coefficients_roundtrip(tmp_path, quad):
    rng = np.random.default_rng(11)
    coeffs = LdoCoefficients(quad, rng.standard_normal((quad.q, 3)))
    path = tmp_path / "coeffs.json"
    save_coefficients(coeffs, path)
    back = load_coefficients(path)
    assert back.basis == coeffs.basis
    np.testing.assert_array_equal(back.p, coeffs.p)


def test_coefficients_shape_validation(quad):
    with pytest.raises(ValueError):
        LdoCoefficients(quad, np.zeros((3, quad.q)))
