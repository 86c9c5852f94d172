import math

import numpy as np
import pytest
from scipy.linalg import eigh_tridiagonal
from hypothesis import given, settings, strategies as st

from rhflow.functionals import (
    _symmetric_operator,
    CSV_HEADER,
    SQRT_2PI,
    density_from_potential,
    entropy_F,
    entropy_W,
    entropy_W_gen,
    lambda0,
    monotonicity_trace,
    potential_f,
    production_F,
    production_W,
    production_W_gen,
    rayleigh_quotient,
)
from rhflow.geometry import Grid, integrate, perturbed_sphere, round_sphere

VOL = 2 * math.pi**2
# converged first eigenvalue of -4 Delta + S on the perturbed family (N=256 value)
PERTURBED_LAMBDA0 = 5.379841938950729


@pytest.fixture(scope="module")
def unit():
    return round_sphere(Grid(128))


def test_uniform_density_entropy_f(unit):
    u = np.full(129, 1 / VOL)
    assert entropy_F(unit, u) == pytest.approx(6.0, rel=1e-8)
    # 2 int |Ric|^2 u with Ric = 2 g
    assert production_F(unit, u) == pytest.approx(24.0, rel=1e-8)


@pytest.mark.parametrize("tau", [0.25, 1.0])
def test_uniform_density_entropy_w_closed_form(unit, tau):
    u = np.full(129, 1 / VOL)
    f = math.log(VOL) - 1.5 * math.log(4 * math.pi * tau)
    assert entropy_W(unit, u, tau) == pytest.approx(6 * tau + f - 3, rel=1e-8)
    # 2 tau int |Ric - g/(2 tau)|^2 u = 2 tau * 3 (2 - 1/(2 tau))^2
    assert production_W(unit, u, tau) == pytest.approx(6 * tau * (2 - 1 / (2 * tau)) ** 2, abs=1e-8)


def test_production_w_vanishes_on_shrinker(unit):
    assert abs(production_W(unit, np.full(129, 1 / VOL), 0.25)) < 1e-12


def test_potential_roundtrip(unit):
    u = np.exp(-np.cos(unit.grid.x))
    u /= integrate(unit, u)
    f = potential_f(unit, u, 0.3)
    assert np.allclose(density_from_potential(f, 0.3), u, rtol=1e-12)


def test_generalized_entropy_parameters(unit):
    m = perturbed_sphere(Grid(128))
    u = np.exp(-(m.grid.x**2))
    u /= integrate(m, u)
    tau = 0.2
    assert entropy_W_gen(m, u, tau, SQRT_2PI) == pytest.approx(entropy_W(m, u, tau), abs=1e-10)
    assert entropy_W_gen(m, u, tau, 0.0) == pytest.approx(
        float(integrate(m, (potential_f(m, u, tau).v - 3) * u)), rel=1e-12
    )
    assert production_W_gen(m, u, tau, SQRT_2PI) == pytest.approx(production_W(m, u, tau))


def test_lambda0_round_sphere():
    assert lambda0(round_sphere(Grid(128))).lambda0 == pytest.approx(6.0, abs=1e-3)
    assert lambda0(round_sphere(Grid(128), 2.0)).lambda0 == pytest.approx(1.5, abs=1e-3)


def test_lambda0_matches_dense_eigensolver():
    m = perturbed_sphere(Grid(64))
    d, e, _ = _symmetric_operator(m)
    ref = eigh_tridiagonal(d, e, select="i", select_range=(0, 0), eigvals_only=True)[0]
    assert lambda0(m).lambda0 == pytest.approx(ref, rel=1e-10)


def test_lambda0_zero_curvature_override():
    res = lambda0(round_sphere(Grid(64)).with_override(0.0))
    assert abs(res.lambda0) < 1e-8
    assert np.ptp(res.eigenfunction.v) < 1e-6 * np.abs(res.eigenfunction.v).max()


def test_lambda0_perturbed():
    res = lambda0(perturbed_sphere(Grid(128)))
    assert res.lambda0 == pytest.approx(PERTURBED_LAMBDA0, abs=2e-4)
    assert res.residual < 1e-6


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=8, max_size=8).filter(lambda c: max(map(abs, c)) > 1e-3))
def test_rayleigh_dominance(coeffs):
    m = perturbed_sphere(Grid(64))
    lam = lambda0(m).lambda0
    v = np.cos(np.outer(m.grid.x, np.arange(8))) @ np.array(coeffs)
    assert rayleigh_quotient(m, v) >= lam - 1e-8


def test_monotonicity_trace(round_hist_128, round_kernel_128):
    G = round_kernel_128
    w = G.width
    rep = monotonicity_trace(round_hist_128, G, 0.5 * w * w)
    sl = rep.interior()
    assert rep.res_F[sl].max() < 1e-2 and rep.res_W[sl].max() < 1e-2
    assert not rep.flags()
    assert rep.times[-1] <= 0.2 - 32 * w * w + 1e-12
    lines = rep.to_csv().splitlines()
    assert lines[0] == CSV_HEADER and len(lines) == len(rep.times) + 1


def test_generalized_rate_identity(round_hist_128, round_kernel_128):
    # dWgen/dt = k prodW + (1 - k)(3/(2 tau) - F) with k = a^2/(2 pi)
    G = round_kernel_128
    rep = monotonicity_trace(round_hist_128, G, 0.5 * G.width**2)
    sl = rep.interior()
    for a in (0.0, 1.0, 5.0):
        k = a * a / (2 * math.pi)
        pred = k * rep.prodW[sl] + (1 - k) * (1.5 / rep.tau[sl] - rep.F[sl])
        err = np.abs(rep.dWgen_dt[a][sl] - pred) / np.maximum(1, np.abs(pred))
        assert err.max() < 2e-2


def test_kernel_entropy_stays_below_scale_bound(round_hist_128, round_kernel_128):
    # on the fundamental solution F < 3/(2 tau), which is what breaks the a > sqrt(2 pi) claim
    G = round_kernel_128
    rep = monotonicity_trace(round_hist_128, G, 0.5 * G.width**2)
    assert np.all(rep.F < 1.5 / rep.tau)
    margins = rep.wgen_margins()
    assert margins[5.0].min() < -0.1
    assert margins[0.0].min() > 0 and margins[1.0].min() > 0


def test_empty_window_gives_header_only(round_hist_128, round_kernel_128):
    rep = monotonicity_trace(round_hist_128, round_kernel_128, 0.01, t_window=(0.5, 0.6))
    assert rep.to_csv() == CSV_HEADER + "\n"
