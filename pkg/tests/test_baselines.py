import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.polynomial import legendre as npleg

from dgvisc.baselines import (
    DBParams,
    MDHParams,
    db_viscosity,
    legendre_modal_ratio,
    mdh_interpolate,
    mdh_ramp,
    mdh_threshold,
    mdh_viscosity,
    mu_max,
)
from dgvisc.dg import build_mesh
from dgvisc.equations import advection, burgers, euler, primitive_to_conservative

# -(2.5 + 4 log10 3), evaluated with mpmath at 30 digits
R0_P4 = -4.408485018878650


def linear_state(mesh, slope):
    return (slope * mesh.x)[None]


def test_db_value_below_cap():
    mesh = build_mesh(0.0, 1.0, 32, 4)
    mu = db_viscosity(mesh, advection(), linear_state(mesh, 3.0))
    np.testing.assert_allclose(mu, 3.0 / 96**2, rtol=1e-12)
    assert mu[0, 0] == pytest.approx(3.2552e-4, abs=1e-8)


def test_db_value_capped():
    mesh = build_mesh(0.0, 1.0, 32, 4)
    mu = db_viscosity(mesh, advection(), linear_state(mesh, 100.0))
    np.testing.assert_allclose(mu, 0.5 / 96, rtol=1e-12)
    assert mu_max(mesh, advection(), linear_state(mesh, 100.0))[0] == pytest.approx(5.2083e-3, abs=1e-7)


def test_db_constant_state_is_zero():
    mesh = build_mesh(0.0, 1.0, 8, 4)
    # nodal differentiation of a constant leaves roundoff only
    np.testing.assert_allclose(db_viscosity(mesh, burgers(), np.full((1, 8, 4), 2.0)), 0.0, atol=1e-15)


@given(st.integers(0, 2**32 - 1))
def test_db_bounded_by_cap(seed):
    mesh = build_mesh(0.0, 1.0, 8, 4)
    U = np.random.default_rng(seed).normal(size=(1, 8, 4)) * 3
    mu = db_viscosity(mesh, burgers(), U)
    assert np.all(mu >= 0)
    assert np.all(mu <= mu_max(mesh, burgers(), U)[:, None] + 1e-15)


def test_db_uses_velocity_for_euler():
    mesh = build_mesh(0.0, 1.0, 8, 4)
    eq = euler()
    W = np.stack([np.full_like(mesh.x, 2.0), 0.5 * mesh.x, np.full_like(mesh.x, 1.0)])
    U = primitive_to_conservative(eq, W)
    h = mesh.dx / 3
    np.testing.assert_allclose(db_viscosity(mesh, eq, U), h * h * 0.5, rtol=1e-10)


def test_modal_ratio_examples():
    mesh = build_mesh(0.0, 1.0, 2, 4)
    psi3 = npleg.legval(mesh.nodes, [0, 0, 0, 1])
    assert legendre_modal_ratio(mesh, psi3) == pytest.approx(0.0, abs=1e-13)
    assert legendre_modal_ratio(mesh, np.full(4, 1.7)) == -np.inf
    assert legendre_modal_ratio(mesh, np.zeros(4)) == -np.inf
    rho = npleg.legval(mesh.nodes, [1, 0, 0, 0.1])
    want = np.log10(0.01 * (2 / 7) / (2 + 0.01 * 2 / 7))
    assert legendre_modal_ratio(mesh, rho) == pytest.approx(want, abs=1e-12)
    assert want == pytest.approx(-2.8457, abs=1e-4)


def test_threshold_and_ramp():
    assert mdh_threshold(4) == pytest.approx(R0_P4, abs=1e-13)
    r0, cK = R0_P4, 0.2
    assert mdh_ramp(r0, r0, cK) == pytest.approx(0.5)
    assert mdh_ramp(r0 - cK - 1e-9, r0, cK) == 0.0
    assert mdh_ramp(r0 + cK + 1e-9, r0, cK) == 1.0
    grid = np.linspace(r0 - 2 * cK, r0 + 2 * cK, 2001)
    vals = mdh_ramp(grid, r0, cK)
    assert np.all(np.diff(vals) >= 0)
    assert np.abs(np.diff(vals)).max() < 0.01


def test_params_validation():
    with pytest.raises(ValueError):
        DBParams(c_beta=-1.0)
    with pytest.raises(ValueError):
        MDHParams(c_K=0.0)


def test_mdh_smooth_state_is_zero():
    mesh = build_mesh(0.0, 1.0, 16, 4)
    U = np.sin(2 * np.pi * mesh.x)[None]
    assert not np.any(mdh_viscosity(mesh, advection(), U))


def test_mdh_activates_on_a_jump():
    mesh = build_mesh(0.0, 1.0, 16, 4)
    U = np.where(mesh.x < 0.5, 1.0, 0.0)[None]
    U[0, 7] = np.where(mesh.nodes < 0.2, 1.0, 0.0)
    mu = mdh_viscosity(mesh, advection(), U)
    assert mu.max() > 0
    assert mu.max() <= mu_max(mesh, advection(), U).max() + 1e-15


@pytest.mark.parametrize("boundary", ["periodic", "dirichlet"])
@given(st.integers(0, 2**32 - 1))
def test_mdh_interpolant_is_continuous_and_nonnegative(boundary, seed):
    mesh = build_mesh(0.0, 1.0, 8, 4, boundary, [0.0], [0.0])
    cells = np.random.default_rng(seed).uniform(0, 1, 8) * (np.random.default_rng(seed + 1).random(8) < 0.5)
    mu = mdh_interpolate(mesh, cells)
    assert np.all(mu >= 0)
    np.testing.assert_allclose(mu[:-1, -1], mu[1:, 0], atol=1e-12)
    if boundary == "periodic":
        assert mu[-1, -1] == pytest.approx(mu[0, 0], abs=1e-12)


def test_mdh_interpolant_passes_through_cell_value_and_face_averages():
    mesh = build_mesh(0.0, 1.0, 3, 3)
    mu = mdh_interpolate(mesh, np.array([1.0, 2.0, 4.0]))
    # p = 3 nodes are -1, 0, 1
    np.testing.assert_allclose(mu[1], [1.5, 2.0, 3.0])
    np.testing.assert_allclose(mu[0], [2.5, 1.0, 1.5])
