"""Ricci-harmonic flow ``dg/dt = -2 Sy``, ``dphi/dt = Delta phi`` in the warped ansatz.

In components: ``da/dt = -a s_rad``, ``df/dt = -f s_sph``, ``dphi/dt = Delta phi``.
Time stepping is classical RK4 with a parabolic step restriction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.interpolate import CubicSpline

from .geometry import (
    _GHOSTS,
    DomainError,
    Grid,
    MetricState,
    _extend,
    curvature,
    d2dx2,
    laplacian,
    ddx,
    metric_from_csv,
    metric_to_csv,
    perturbed_sphere,
    radial_distance,
    round_sphere,
)

FAMILIES = ("round", "perturbed")


class BlowUpError(RuntimeError):
    """The flow left the class of smooth metrics; carries the last state reached."""

    def __init__(self, message: str, state: MetricState, history: Optional["FlowHistory"] = None):
        super().__init__(message)
        self.state = state
        self.t = state.t
        self.history = history


@dataclass(frozen=True)
class HomogeneousState:
    """Exact round-sphere solution: ``r(t)^2 = r0^2 - 4t`` with constant ``phi``."""

    r: float
    phi0: float = 0.0
    t: float = 0.0

    def __post_init__(self):
        if not self.r > 0:
            raise DomainError(f"radius must be positive, got {self.r}")

    @property
    def blowup_time(self) -> float:
        return self.t + self.r**2 / 4.0

    def at(self, t: float) -> "HomogeneousState":
        r2 = self.r**2 - 4.0 * (t - self.t)
        if r2 <= 0:
            raise DomainError(f"round sphere has collapsed before t={t}")
        return HomogeneousState(math.sqrt(r2), self.phi0, t)

    def to_metric(self, grid: Grid) -> MetricState:
        return round_sphere(grid, self.r, np.full(grid.N + 1, self.phi0), self.t)


@dataclass
class FlowConfig:
    N: int = 256
    t_end: float = 0.2
    cfl: float = 0.25
    family: str = "round"
    r0: float = 1.0
    eps: float = 0.1
    phi_amp: float = 0.2
    stride: int = 1
    dt_max: Optional[float] = None
    # blow-up once the largest Sy eigenvalue exceeds this multiple of its initial size
    curvature_cap: float = 1e4
    coupling: bool = True

    def __post_init__(self):
        if not 0 < self.cfl <= 0.25:
            raise DomainError(f"cfl exceeds 0.25 or is not positive: {self.cfl}")
        if not self.t_end > 0:
            raise DomainError(f"t_end must be positive, got {self.t_end}")
        if self.family not in FAMILIES:
            raise DomainError(f"unknown initial family {self.family!r}; known: {', '.join(FAMILIES)}")
        if self.stride < 1:
            raise DomainError("stride must be at least 1")
        if self.dt_max is not None and not self.dt_max > 0:
            raise DomainError("dt_max must be positive")

    def initial_state(self) -> MetricState:
        grid = Grid(self.N)
        if self.family == "round":
            return round_sphere(grid, self.r0)
        return perturbed_sphere(grid, self.eps, self.phi_amp)


@dataclass
class FlowHistory:
    """Snapshots of the flow on one grid, ordered by strictly increasing time."""

    states: list
    frozen: bool = False
    cfl: float = float("nan")

    def __post_init__(self):
        if not self.states:
            raise DomainError("empty history")
        n = self.states[0].grid.N
        for s in self.states:
            if s.grid.N != n:
                raise DomainError("history mixes grids")
        self.times = np.array([s.t for s in self.states])
        if np.any(np.diff(self.times) <= 0):
            raise DomainError("history times must be strictly increasing")

    @classmethod
    def static(cls, m: MetricState, t0: float = 0.0, t1: float = 1.0) -> "FlowHistory":
        """A frozen background: the same metric at both ends of ``[t0, t1]``."""
        return cls(
            [
                MetricState(t0, m.grid, m.a, m.f, m.phi, m.s_override),
                MetricState(t1, m.grid, m.a, m.f, m.phi, m.s_override),
            ],
            frozen=True,
        )

    @property
    def grid(self) -> Grid:
        return self.states[0].grid

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def t_final(self) -> float:
        return float(self.times[-1])

    def __len__(self) -> int:
        return len(self.states)

    def metric_at(self, t: float) -> MetricState:
        return metric_at(self, t)


# ---------------------------------------------------------------------------
# right-hand side

# Upwind-biased first derivative (offsets -3..+2) for the transport of ln a,
# whose characteristics leave each pole.
_UPWIND = np.array([-2.0, 15.0, -60.0, 20.0, 30.0, -3.0]) / 60.0
# sixth difference, used as a weak dissipation on ln a; vanishes on constants
_D6 = (-20.0, 15.0, -6.0, 1.0)
HYPERVISCOSITY = 0.05


def _upwind_ddx(v: np.ndarray, parity: str, h: float, velocity: np.ndarray) -> np.ndarray:
    e = _extend(v, parity)
    n, g = v.size, _GHOSTS
    fwd = np.zeros(n)
    bwd = np.zeros(n)
    for k, c in zip(range(-3, 3), _UPWIND):
        fwd += c * e[g + k:g + k + n]
        bwd -= c * e[g - k:g - k + n]
    return np.where(velocity > 0, fwd, bwd) / h


def _sixth_difference(v: np.ndarray, parity: str) -> np.ndarray:
    e = _extend(v, parity)
    n, g = v.size, _GHOSTS
    out = _D6[0] * v
    for k in (1, 2, 3):
        out = out + _D6[k] * (e[g + k:g + k + n] + e[g - k:g - k + n])
    return out


def _rhs(m: MetricState, coupling: bool):
    """Time derivatives of ``(a, f, phi)``.

    ``ln a`` is transported away from the poles at speed ``2 f_x / (a^2 f)``. Its
    derivative is upwinded and a weak sixth-order dissipation damps the grid-scale
    gauge modes that the un-gauged system leaves neutral. Pole values of ``a``
    follow the regularity constraint ``a = |f_x|``, which is then kept exactly.
    """
    h = m.grid.h
    a, f = m.a, m.f
    fx = ddx(f, "odd", h)
    fxx = d2dx2(f, "odd", h)
    log_a = np.log(a)
    lx = _upwind_ddx(log_a, "even", h, fx)
    D2f = (fxx - lx * fx) / a**2

    inner = slice(1, -1)
    kf = np.zeros_like(f)
    ka = np.zeros_like(a)
    kf[inner] = D2f[inner] - (1.0 - (fx[inner] / a[inner]) ** 2) / f[inner]
    ka[inner] = 2.0 * a[inner] * D2f[inner] / f[inner]
    if coupling:
        px = ddx(m.phi, "even", h)
        ka[inner] += 2.0 * px[inner] ** 2 / a[inner]
        kphi = (d2dx2(m.phi, "even", h) - lx * px) / a**2
        kphi[inner] += 2.0 * fx[inner] * px[inner] / (a[inner] ** 2 * f[inner])
        kphi[0] *= 3.0
        kphi[-1] *= 3.0
    else:
        kphi = np.zeros_like(m.phi)
    ka += HYPERVISCOSITY * _sixth_difference(log_a, "even") / (a * h**2)
    kfx = ddx(kf, "odd", h)
    ka[0], ka[-1] = kfx[0], -kfx[-1]
    return ka, kf, kphi


def _shift(m: MetricState, dt: float, k) -> MetricState:
    f = m.f + dt * k[1]
    f[0] = f[-1] = 0.0
    return MetricState(m.t + dt, m.grid, m.a + dt * k[0], f, m.phi + dt * k[2])


def _healthy(m: MetricState) -> bool:
    return bool(
        np.all(np.isfinite(m.a)) and np.all(np.isfinite(m.f)) and np.all(np.isfinite(m.phi))
        and np.all(m.a > 0) and np.all(m.f[1:-1] > 0)
    )


def _rk4(m: MetricState, dt: float, coupling: bool, k1=None) -> MetricState:
    try:
        if k1 is None:
            k1 = _rhs(m, coupling)
        k2 = _rhs(_shift(m, dt / 2, k1), coupling)
        k3 = _rhs(_shift(m, dt / 2, k2), coupling)
        k4 = _rhs(_shift(m, dt, k3), coupling)
    except DomainError as exc:
        raise BlowUpError(f"flow degenerated during a stage at t={m.t:.6g}: {exc}", m) from exc
    combo = tuple((p + 2 * q + 2 * r + s) / 6.0 for p, q, r, s in zip(k1, k2, k3, k4))
    out = _shift(m, dt, combo)
    if not _healthy(out):
        raise BlowUpError(f"non-finite or degenerate metric after step at t={m.t:.6g}", m)
    return out


def step(m: MetricState, dt: float, coupling: bool = True) -> MetricState:
    """One RK4 step of size ``dt``."""
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt}")
    return _rk4(m, dt, coupling)


def stable_dt(m: MetricState, cfl: float) -> float:
    return cfl * (float(np.min(m.a)) * m.grid.h) ** 2


def _sy_scale(m: MetricState, k) -> float:
    """Largest ``|Sy|`` eigenvalue, read off the time derivatives of ``a`` and ``f``."""
    return max(float(np.max(np.abs(k[0] / m.a))), float(np.max(np.abs(k[1][1:-1] / m.f[1:-1]))))


def run(cfg: FlowConfig, initial: Optional[MetricState] = None) -> FlowHistory:
    """Integrate for ``cfg.t_end`` time units from the configured (or supplied) data.

    Blow-up is declared on degeneration or once the largest ``Sy`` eigenvalue
    exceeds ``curvature_cap`` times its initial size.
    """
    m = cfg.initial_state() if initial is None else initial
    t_end = m.t + cfg.t_end
    states = [m]
    k1 = _rhs(m, cfg.coupling)
    cap = cfg.curvature_cap * max(_sy_scale(m, k1), 1.0)
    n = 0
    while True:
        dt = stable_dt(m, cfg.cfl)
        if cfg.dt_max is not None:
            dt = min(dt, cfg.dt_max)
        last = m.t + dt >= t_end - 1e-14 * max(1.0, abs(t_end))
        if last:
            dt = t_end - m.t
        try:
            m = _rk4(m, dt, cfg.coupling, k1)
            if last:
                m = MetricState(t_end, m.grid, m.a, m.f, m.phi)
            k1 = _rhs(m, cfg.coupling)
            if _sy_scale(m, k1) > cap:
                raise BlowUpError(f"curvature exceeded {cap:.3g} at t={m.t:.6g}", m)
        except BlowUpError as exc:
            if len(states) >= 2:
                exc.history = FlowHistory(states, cfl=cfg.cfl)
            raise
        n += 1
        if last or n % cfg.stride == 0:
            states.append(m)
        if last:
            return FlowHistory(states, cfl=cfg.cfl)


def metric_at(hist: FlowHistory, t: float) -> MetricState:
    """Nodewise linear interpolation in time; stored snapshots are returned as-is."""
    times = hist.times
    tol = 1e-13 * max(1.0, abs(t))
    if t < times[0] - tol or t > times[-1] + tol:
        raise DomainError(f"t={t} outside history [{times[0]}, {times[-1]}]")
    if hist.frozen:
        m = hist.states[0]
        return MetricState(t, m.grid, m.a, m.f, m.phi, m.s_override)
    k = int(np.searchsorted(times, t - tol, side="left"))
    if k < len(times) and abs(times[k] - t) <= tol:
        return hist.states[k]
    lo, hi = hist.states[k - 1], hist.states[k]
    w = (t - lo.t) / (hi.t - lo.t)
    return MetricState(
        t,
        lo.grid,
        (1 - w) * lo.a + w * hi.a,
        (1 - w) * lo.f + w * hi.f,
        (1 - w) * lo.phi + w * hi.phi,
        lo.s_override,
    )


@dataclass(frozen=True)
class DistanceRate:
    residual: float
    rate_fd: float
    rate_identity: float

    @property
    def nonincreasing(self) -> bool:
        return self.rate_fd <= 1e-8


def distance_derivative_residual(
    hist: FlowHistory, t: float, x_coord: float, dt: Optional[float] = None
) -> DistanceRate:
    """Centred time difference of ``d(N, x)`` against ``-int_0^x s_rad a dxi``.

    ``dt`` defaults to the spacing of the stored snapshots around ``t``.
    """
    if not 0 < x_coord <= math.pi:
        raise DomainError(f"probe coordinate {x_coord} outside (0, pi]")
    if dt is None:
        k = int(np.searchsorted(hist.times, t))
        k = min(max(k, 1), len(hist.times) - 1)
        dt = float(hist.times[k] - hist.times[k - 1])
    if t - dt < hist.t0 - 1e-14 or t + dt > hist.t_final + 1e-14:
        raise DomainError(f"t={t} too close to the history ends for a centred difference with dt={dt}")
    d_plus = radial_distance(metric_at(hist, t + dt), x_coord)
    d_minus = radial_distance(metric_at(hist, t - dt), x_coord)
    rate_fd = (d_plus - d_minus) / (2 * dt)
    m = metric_at(hist, t)
    c = curvature(m)
    rate_id = -float(CubicSpline(m.grid.x, c.s_rad * m.a).integrate(0.0, x_coord))
    return DistanceRate(abs(rate_fd - rate_id), rate_fd, rate_id)


def evolution_identity_residual(hist: FlowHistory, k: int, span: float = 1e-4, exclude: int = 0) -> float:
    """``max |dS/dt - (Delta S + 2|Sy|^2 + 4 (Delta phi)^2)|`` at snapshot ``k``.

    ``dS/dt`` is a centred difference over the nearest snapshots at least
    ``span`` away on each side; differencing adjacent snapshots would amplify
    the roundoff in the pole values of ``S``.  ``exclude`` drops that many
    nodes next to each pole (diagnostic only).
    """
    t = hist.times[k]
    lo = int(np.searchsorted(hist.times, t - span * (1 - 1e-9), side="right")) - 1
    hi = int(np.searchsorted(hist.times, t + span * (1 - 1e-9), side="left"))
    if lo < 0 or hi >= len(hist) or lo == k or hi == k:
        raise DomainError(f"snapshot {k} lacks neighbours {span} away on both sides")
    t0, t2 = hist.times[lo], hist.times[hi]
    S0 = curvature(hist.states[lo]).S
    S2 = curvature(hist.states[hi]).S
    m = hist.states[k]
    c = curvature(m)
    # second-order weights for uneven spacing
    h0, h1 = t - t0, t2 - t
    dSdt = (h0**2 * S2 - h1**2 * S0 + (h1**2 - h0**2) * c.S) / (h0 * h1 * (h0 + h1))
    rhs = laplacian(m, c.S).v + 2.0 * c.sy_norm2 + 4.0 * laplacian(m, m.phi).v ** 2
    err = np.abs(dSdt - rhs)
    if exclude:
        err = err[exclude:-exclude]
    return float(np.max(err))


def sy_nonnegative(hist: FlowHistory, tol: float = 1e-8) -> list[bool]:
    """Per-snapshot flag for ``Sy >= -tol`` (a hypothesis, never enforced)."""
    out = []
    for m in hist.states:
        c = curvature(m)
        out.append(bool(np.min(c.s_rad) >= -tol and np.min(c.s_sph) >= -tol))
    return out


# ---------------------------------------------------------------------------
# history files

def history_to_text(hist: FlowHistory) -> str:
    parts = [f"# flow N={hist.grid.N} K={len(hist)} scheme=rk4 cfl={hist.cfl:.17g}\n"]
    parts.extend(metric_to_csv(m) for m in hist.states)
    return "".join(parts)


def history_from_text(text: str) -> FlowHistory:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# flow"):
        raise DomainError("missing flow manifest line")
    meta = dict(item.split("=", 1) for item in lines[0][len("# flow"):].split())
    N, K = int(meta["N"]), int(meta["K"])
    blocks, cur = [], None
    for ln in lines[1:]:
        if ln.startswith("# t="):
            if cur is not None:
                blocks.append("\n".join(cur))
            cur = [ln]
        elif cur is not None and ln.strip():
            cur.append(ln)
    if cur is not None:
        blocks.append("\n".join(cur))
    states = [metric_from_csv(b) for b in blocks]
    if len(states) != K:
        raise DomainError(f"manifest announces {K} blocks, found {len(states)}")
    for s in states:
        if s.grid.N != N:
            raise DomainError(f"block at t={s.t} uses N={s.grid.N}, manifest says N={N}")
    return FlowHistory(states, cfl=float(meta.get("cfl", "nan")))
