import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import random_regular_profile, ricci_eigenvalues
from rhflow.geometry import (
    DomainError,
    Grid,
    MetricState,
    ScalarField,
    arclength_derivative,
    ball_volume,
    cell_volumes,
    curvature,
    default_tol,
    diameter_along_axis,
    distance_from_pole,
    gradient_energy,
    hessian_eigenvalues,
    integrate,
    laplacian,
    lp_norm,
    metric_from_csv,
    metric_to_csv,
    perturbed_sphere,
    radial_distance,
    round_sphere,
)


def profile_state(N, seed):
    a, f, phi = random_regular_profile(np.random.default_rng(seed))
    x = Grid(N).x
    fv = np.array([f(t) for t in x])
    fv[0] = fv[-1] = 0.0
    return MetricState(0.0, Grid(N), np.array([a(t) for t in x]), fv, np.array([phi(t) for t in x])), (a, f)


def test_grid_rejects_tiny_n():
    with pytest.raises(DomainError):
        Grid(2)


def test_grid_spacing():
    g = Grid(64)
    assert g.h == pytest.approx(math.pi / 64)
    assert g.x[0] == 0.0 and g.x[-1] == pytest.approx(math.pi)


def test_nonpositive_lapse_rejected():
    m = round_sphere(Grid(32))
    a = m.a.copy()
    a[5] = 0.0
    with pytest.raises(DomainError, match="lapse"):
        curvature(MetricState(0.0, m.grid, a, m.f, m.phi))


def test_shape_mismatch_rejected():
    with pytest.raises(DomainError):
        MetricState(0.0, Grid(16), np.ones(16), np.zeros(17), np.zeros(17))


@pytest.mark.parametrize("r", [1.0, 2.0])
def test_round_sphere_curvature(r):
    c = curvature(round_sphere(Grid(128), r))
    tol = default_tol(math.pi / 128)
    assert np.allclose(c.ric_rad, 2 / r**2, atol=tol)
    assert np.allclose(c.ric_sph, 2 / r**2, atol=tol)
    assert np.allclose(c.R, 6 / r**2, atol=tol)


def test_s_is_r_minus_twice_dphi_squared():
    m, _ = profile_state(64, 3)
    c = curvature(m)
    assert np.array_equal(c.S, c.R - 2.0 * c.dphi**2)
    assert np.allclose(c.s_rad + 2 * c.s_sph, c.S, rtol=1e-13, atol=1e-12)


def test_s_override():
    c = curvature(round_sphere(Grid(32)).with_override(-3.0))
    assert np.all(c.S == -3.0)
    assert np.allclose(c.s_rad, -1.0) and np.allclose(c.s_sph, -1.0)


@pytest.mark.parametrize("seed", [0, 1])
def test_curvature_against_christoffel_oracle(seed):
    m, (a, f) = profile_state(256, seed)
    c = curvature(m)
    for i in (20, 64, 128, 200, 240):
        rr, rs = ricci_eigenvalues(a, f, m.grid.x[i])
        assert c.ric_rad[i] == pytest.approx(rr, rel=1e-5, abs=1e-5)
        assert c.ric_sph[i] == pytest.approx(rs, rel=1e-5, abs=1e-5)


def test_volume_of_round_sphere():
    for r in (1.0, 1.5):
        m = round_sphere(Grid(128), r)
        assert integrate(m, np.ones(129)) == pytest.approx(2 * math.pi**2 * r**3, rel=1e-7)


def test_laplacian_of_first_eigenfunction():
    # cos x is a first eigenfunction of the unit 3-sphere with eigenvalue 3
    m = round_sphere(Grid(128))
    lap = laplacian(m, np.cos(m.grid.x))
    assert np.max(np.abs(lap.v + 3 * np.cos(m.grid.x))) < 1e-7


def test_laplacian_scales_inversely_with_metric():
    m = perturbed_sphere(Grid(64))
    u = np.cos(m.grid.x) ** 2
    assert np.allclose(laplacian(m.scaled(2.0), u).v, laplacian(m, u).v / 4, atol=1e-12)


def test_hessian_of_cos_on_round_sphere():
    # Hess(cos d) = -cos d g on the unit sphere
    m = round_sphere(Grid(128))
    lam_r, lam_s = hessian_eigenvalues(m, np.cos(m.grid.x))
    assert np.max(np.abs(lam_r + np.cos(m.grid.x))) < 1e-7
    assert np.max(np.abs(lam_s + np.cos(m.grid.x))) < 1e-7


def test_gradient_energy_constant_is_zero():
    m = perturbed_sphere(Grid(64))
    assert gradient_energy(m, np.ones(65)) == 0.0


def test_gradient_energy_of_eigenfunction():
    # int |grad cos x|^2 = 3 int cos^2 x on the unit sphere
    m = round_sphere(Grid(256))
    u = np.cos(m.grid.x)
    assert gradient_energy(m, u) == pytest.approx(3 * integrate(m, u * u), rel=1e-4)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=6, max_size=6), st.lists(st.floats(-1, 1), min_size=6, max_size=6))
def test_integration_by_parts(cu, cv):
    m = perturbed_sphere(Grid(128))
    x = m.grid.x
    k = np.arange(6)
    u = np.cos(np.outer(x, k)) @ np.array(cu)
    v = np.cos(np.outer(x, k)) @ np.array(cv)
    W = cell_volumes(m)
    lhs = W @ (arclength_derivative(m, v) * arclength_derivative(m, u)) + W @ (v * laplacian(m, u).v)
    tol = default_tol(m.grid.h)
    assert abs(lhs) <= tol * (lp_norm(m, v, 2) * lp_norm(m, laplacian(m, u), 2) + 1)


def test_lp_norm_of_constant():
    m = round_sphere(Grid(64))
    vol = integrate(m, np.ones(65))
    assert lp_norm(m, ScalarField(m.grid, np.full(65, 2.0)), 6) == pytest.approx(2 * vol ** (1 / 6))
    with pytest.raises(DomainError):
        lp_norm(m, np.ones(65), 0.5)


def test_distances_on_round_sphere():
    m = round_sphere(Grid(128), 2.0)
    assert np.allclose(distance_from_pole(m), 2.0 * m.grid.x, atol=1e-12)
    assert radial_distance(m, 1.0) == pytest.approx(2.0)
    assert diameter_along_axis(m) == pytest.approx(2 * math.pi)
    with pytest.raises(DomainError):
        radial_distance(m, 4.0)


def test_ball_volume():
    m = round_sphere(Grid(256))
    rho = 0.7
    exact = 2 * math.pi * (rho - math.sin(rho) * math.cos(rho))
    assert ball_volume(m, rho) == pytest.approx(exact, rel=1e-6)
    assert ball_volume(m, 10.0) == pytest.approx(2 * math.pi**2, rel=1e-7)
    assert ball_volume(m, 0.0) == 0.0


def test_csv_roundtrip():
    m = perturbed_sphere(Grid(32), t=0.125)
    back = metric_from_csv(metric_to_csv(m))
    assert back.t == m.t
    assert np.array_equal(back.a, m.a) and np.array_equal(back.f, m.f) and np.array_equal(back.phi, m.phi)


def test_invariants_hold_for_initial_families():
    assert perturbed_sphere(Grid(128)).invariant_violations() == []
    assert round_sphere(Grid(128)).invariant_violations() == []
