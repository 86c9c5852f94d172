import math

import numpy as np
import pytest

from rhflow.flow import (
    BlowUpError,
    FlowConfig,
    FlowHistory,
    HomogeneousState,
    distance_derivative_residual,
    evolution_identity_residual,
    history_from_text,
    history_to_text,
    metric_at,
    run,
    stable_dt,
    step,
    sy_nonnegative,
)
from rhflow.geometry import DomainError, Grid, round_sphere

# converged value f(pi/2, t=0.05) for the perturbed family, N=256 run
PERTURBED_F_EQ = 0.985845826923176


def test_homogeneous_state():
    s = HomogeneousState(r=1.0, phi0=0.3)
    assert s.blowup_time == pytest.approx(0.25)
    assert s.at(0.2).r == pytest.approx(math.sqrt(0.2))
    assert s.at(0.2).phi0 == 0.3
    with pytest.raises(DomainError):
        s.at(0.3)


def test_config_rejects_large_cfl():
    with pytest.raises(DomainError, match="cfl exceeds 0.25"):
        FlowConfig(cfl=0.5)


def test_config_rejects_unknown_family():
    with pytest.raises(DomainError):
        FlowConfig(family="torus")


def test_round_sphere_matches_exact_shrinking(round_hist_128):
    j = 64
    err = max(abs(m.f[j] ** 2 - (1 - 4 * m.t)) / (1 - 4 * m.t) for m in round_hist_128.states)
    assert err < 1e-10


def test_round_sphere_stays_round(round_hist_128):
    m = round_hist_128.states[-1]
    r = math.sqrt(1 - 4 * m.t)
    assert np.allclose(m.a, r, rtol=1e-9)
    assert np.allclose(m.f, r * np.sin(m.grid.x), atol=1e-9)


def test_blow_up_reported_near_quarter():
    with pytest.raises(BlowUpError) as info:
        run(FlowConfig(N=32, t_end=0.3))
    assert 0.2 < info.value.t <= 0.25


def test_run_is_deterministic():
    cfg = FlowConfig(N=32, t_end=0.01, family="perturbed")
    a, b = run(cfg), run(cfg)
    assert all(np.array_equal(x.f, y.f) and np.array_equal(x.a, y.a) for x, y in zip(a.states, b.states))


def test_perturbed_run_converges(perturbed_hist_128):
    m = perturbed_hist_128.states[-1]
    assert m.f[64] == pytest.approx(PERTURBED_F_EQ, abs=1e-9)
    assert all(s.invariant_violations() == [] for s in perturbed_hist_128.states)
    assert all(sy_nonnegative(perturbed_hist_128))


def test_uncoupled_flow_keeps_phi():
    hist = run(FlowConfig(N=32, t_end=0.005, family="perturbed", coupling=False))
    assert np.array_equal(hist.states[-1].phi, hist.states[0].phi)


def test_step_is_deterministic_and_positive():
    m = round_sphere(Grid(64))
    dt = stable_dt(m, 0.25)
    assert dt == pytest.approx(0.25 * (math.pi / 64) ** 2)
    n = step(m, dt)
    assert n.t == pytest.approx(dt) and np.all(n.a > 0)


def test_metric_at_exact_at_snapshots(round_hist_128):
    h = round_hist_128
    assert metric_at(h, h.t0) is h.states[0]
    assert metric_at(h, h.t_final) is h.states[-1]
    with pytest.raises(DomainError):
        metric_at(h, h.t_final + 1.0)


def test_metric_at_between_snapshots(round_hist_128):
    h = round_hist_128
    t = 0.5 * (h.times[10] + h.times[11])
    gap = h.times[11] - h.times[10]
    m = metric_at(h, t)
    # linear interpolation error is O(gap^2)
    assert m.f[64] ** 2 == pytest.approx(1 - 4 * t, abs=2 * gap**2)


def test_static_history_is_frozen():
    m = round_sphere(Grid(16))
    h = FlowHistory.static(m, 0.0, 1.0)
    later = metric_at(h, 0.3)
    assert h.frozen and later.t == 0.3 and np.array_equal(later.f, m.f)


def test_distance_rate_on_round_sphere(round_hist_128):
    # d(N, S) = pi sqrt(1 - 4t); its rate at t is -2 pi / sqrt(1 - 4t)
    t = 0.1
    r = distance_derivative_residual(round_hist_128, t, math.pi)
    assert r.rate_identity == pytest.approx(-2 * math.pi / math.sqrt(1 - 4 * t), rel=1e-6)
    assert r.residual < 1e-5
    assert r.nonincreasing


def test_distance_rate_rejects_endpoint(round_hist_128):
    with pytest.raises(DomainError):
        distance_derivative_residual(round_hist_128, 0.0, 1.0)
    with pytest.raises(DomainError):
        distance_derivative_residual(round_hist_128, 0.1, 0.0)


def test_distance_rate_on_perturbed_family(perturbed_hist_128):
    r = distance_derivative_residual(perturbed_hist_128, 0.025, math.pi)
    assert r.residual < 1e-5 and r.nonincreasing


def test_evolution_identity_on_perturbed_family(perturbed_hist_128):
    k = len(perturbed_hist_128) // 2
    interior = evolution_identity_residual(perturbed_hist_128, k, exclude=8)
    assert interior < 1e-4
    with pytest.raises(DomainError):
        evolution_identity_residual(perturbed_hist_128, 0)


def test_history_text_roundtrip():
    h = run(FlowConfig(N=16, t_end=0.002, stride=3))
    text = history_to_text(h)
    assert text.startswith(f"# flow N=16 K={len(h)} scheme=rk4")
    back = history_from_text(text)
    assert np.array_equal(back.times, h.times)
    assert np.array_equal(back.states[-1].f, h.states[-1].f)


def test_history_reader_rejects_mixed_grids():
    a = history_to_text(run(FlowConfig(N=16, t_end=0.001)))
    b = history_to_text(run(FlowConfig(N=32, t_end=0.001)))
    head, _, body_b = b.partition("\n")
    with pytest.raises(DomainError):
        history_from_text(a + body_b)
