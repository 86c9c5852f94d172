"""Forward heat and conjugate heat equations along a flow history.

Both solvers are implicit Euler on the finite-volume operator of
:mod:`rhflow.geometry`: a symmetric tridiagonal system with a diagonal measure,
which is an M-matrix, so nonnegative data stay nonnegative.  The conjugate step
is written in conservative form, ``d/dt (u dmu) = -Delta u dmu``, so the
discrete mass telescopes exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import solve_banded

from .flow import FlowHistory, metric_at
from .geometry import (
    DomainError,
    Grid,
    MetricState,
    ScalarField,
    _values,
    arclength_derivative,
    cell_volumes,
    curvature,
    distance_from_pole,
    face_conductances,
    laplacian,
)

FORWARD = "forward"
CONJUGATE = "conjugate"
DEFAULT_DT = 1e-4
POSITIVITY_TOL = 1e-12


@dataclass
class HeatSolution:
    """Solution samples at increasing times, with masses ``int u dmu(g(t_k))``."""

    direction: str
    grid: Grid
    times: np.ndarray
    values: np.ndarray  # shape (K, N + 1)
    masses: np.ndarray
    dt: float
    width: Optional[float] = None
    tol_mass: float = 1e-4
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.times)

    def field(self, k: int) -> ScalarField:
        return ScalarField(self.grid, self.values[k])

    def index_of(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise DomainError(f"t={t} is not a stored time of this solution")
        return k

    def at(self, t: float) -> np.ndarray:
        return self.values[self.index_of(t)]

    def mass_defect(self, reference: Optional[float] = None) -> float:
        ref = self.masses[-1] if reference is None else reference
        return float(np.max(np.abs(self.masses - ref)))

    def to_csv(self) -> str:
        width = "none" if self.width is None else f"{self.width:.17g}"
        lines = [
            f"# direction={self.direction} N={self.grid.N} width={width} dt={self.dt:.17g} "
            f"tol_mass={self.tol_mass:.3g} tol_positivity={POSITIVITY_TOL:.3g}",
            "t,x,u",
        ]
        x = self.grid.x
        for t, row in zip(self.times, self.values):
            lines.extend(f"{t:.17g},{xi:.17g},{ui:.17g}" for xi, ui in zip(x, row))
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class DeltaApprox:
    """Gaussian bump in arclength about the north pole, truncated at six widths."""

    width: float

    def values(self, m: MetricState) -> np.ndarray:
        d = distance_from_pole(m)
        u = np.where(d <= 6.0 * self.width, np.exp(-0.5 * (d / self.width) ** 2), 0.0)
        return u / float(np.dot(cell_volumes(m), u))

    @property
    def effective_age(self) -> float:
        """Heat-kernel age whose Gaussian profile has this width."""
        return 0.5 * self.width**2


def default_width(m: MetricState) -> float:
    return 4.0 * float(np.max(m.a)) * m.grid.h


def min_width(m: MetricState) -> float:
    return 2.0 * float(np.max(m.a)) * m.grid.h


# ---------------------------------------------------------------------------
# linear algebra

def _banded(W: np.ndarray, k: np.ndarray, dt: float, extra: Optional[np.ndarray] = None) -> np.ndarray:
    """Banded storage of ``W - dt L (+ extra)``."""
    n = W.size
    ab = np.zeros((3, n))
    diag = W.copy()
    diag[:-1] += dt * k
    diag[1:] += dt * k
    if extra is not None:
        diag += extra
    ab[1] = diag
    ab[0, 1:] = -dt * k
    ab[2, :-1] = -dt * k
    return ab


class _Operators:
    """Caches ``(W, k, S)`` per time; a frozen history has a single entry."""

    def __init__(self, hist: FlowHistory, need_s: bool = False):
        self.hist = hist
        self.need_s = need_s
        self._cache: dict = {}

    def __call__(self, t: float):
        key = 0.0 if self.hist.frozen else t
        if key not in self._cache:
            m = self.hist.states[0] if self.hist.frozen else metric_at(self.hist, t)
            s = curvature(m).S if self.need_s else None
            self._cache = {key: (cell_volumes(m), face_conductances(m), s, m)}
        return self._cache[key]


def _time_grid(t_from: float, t_to: float, dt: float) -> np.ndarray:
    if not dt > 0:
        raise DomainError(f"heat step must be positive, got {dt}")
    n = max(1, int(math.ceil(abs(t_to - t_from) / dt - 1e-9)))
    return np.linspace(t_from, t_to, n + 1)


def _check_window(hist: FlowHistory, lo: float, hi: float) -> None:
    tol = 1e-12 * max(1.0, abs(hi))
    if lo < hist.t0 - tol or hi > hist.t_final + tol:
        raise DomainError(f"window [{lo}, {hi}] not inside history [{hist.t0}, {hist.t_final}]")


def _recorded(ts: np.ndarray, record_every: int) -> np.ndarray:
    keep = np.zeros(ts.size, dtype=bool)
    keep[::record_every] = True
    keep[-1] = True
    return keep


# ---------------------------------------------------------------------------
# solvers

def solve_forward(
    hist: FlowHistory,
    u0,
    t0: float,
    t1: float,
    dt: float = DEFAULT_DT,
    record_every: int = 1,
) -> HeatSolution:
    """``du/dt = Delta_{g(t)} u`` from ``t0`` to ``t1``:
    ``(W_{n+1} - dt L_{n+1}) u^{n+1} = W_{n+1} u^n``."""
    if not t1 > t0:
        raise DomainError("solve_forward needs t0 < t1")
    _check_window(hist, t0, t1)
    grid = hist.grid
    u = _values(u0, grid, getattr(u0, "parity", "even")).astype(float).copy()
    nonneg = bool(np.all(u >= 0))
    ts = _time_grid(t0, t1, dt)
    keep = _recorded(ts, record_every)
    ops = _Operators(hist)
    W, k, _, _ = ops(ts[0])
    vals, masses, times = [u.copy()], [float(W @ u)], [ts[0]]
    for n in range(1, ts.size):
        h_step = ts[n] - ts[n - 1]
        W, k, _, _ = ops(ts[n])
        u = solve_banded((1, 1), _banded(W, k, h_step), W * u, check_finite=False)
        if nonneg and u.min() < -POSITIVITY_TOL:
            raise DomainError(f"forward solution lost positivity at t={ts[n]:.6g}")
        if keep[n]:
            vals.append(u.copy())
            masses.append(float(W @ u))
            times.append(ts[n])
    return HeatSolution(FORWARD, grid, np.array(times), np.array(vals), np.array(masses), float(ts[1] - ts[0]))


def solve_conjugate(
    hist: FlowHistory,
    uT,
    T: float,
    t_stop: float,
    dt: float = DEFAULT_DT,
    record_every: int = 1,
    tol_mass: float = 1e-4,
) -> HeatSolution:
    """``du/dt = -Delta u + S u`` backward from ``T`` to ``t_stop``.

    Evolving history: ``(W_n - dt L_n) u^n = W_{n+1} u^{n+1}``; the ``S u`` term
    is carried by the change of the discrete measure. Frozen history: the
    measure is fixed, so ``dt S W`` is added to the diagonal.
    """
    if not t_stop < T:
        raise DomainError("solve_conjugate needs t_stop < T")
    _check_window(hist, t_stop, T)
    grid = hist.grid
    u = _values(uT, grid, getattr(uT, "parity", "even")).astype(float).copy()
    if np.any(u < 0):
        raise DomainError("terminal data must be nonnegative")
    ts = _time_grid(T, t_stop, dt)  # decreasing
    keep = _recorded(ts, record_every)
    ops = _Operators(hist, need_s=hist.frozen)
    W_next, _, _, _ = ops(ts[0])
    vals, masses, times = [u.copy()], [float(W_next @ u)], [ts[0]]
    for n in range(1, ts.size):
        h_step = ts[n - 1] - ts[n]
        W, k, S, _ = ops(ts[n])
        extra = h_step * S * W if hist.frozen else None
        u = solve_banded((1, 1), _banded(W, k, h_step, extra), W_next * u, check_finite=False)
        if u.min() < -POSITIVITY_TOL:
            raise DomainError(f"conjugate solution lost positivity at t={ts[n]:.6g}")
        W_next = W
        if keep[n]:
            vals.append(u.copy())
            masses.append(float(W @ u))
            times.append(ts[n])
    order = slice(None, None, -1)
    return HeatSolution(
        CONJUGATE,
        grid,
        np.array(times)[order],
        np.array(vals)[order],
        np.array(masses)[order],
        float(ts[0] - ts[1]),
        tol_mass=tol_mass,
    )


def fundamental_solution(
    hist: FlowHistory,
    T: float,
    t_stop: float,
    width: Optional[float] = None,
    dt: float = DEFAULT_DT,
    record_every: int = 1,
) -> HeatSolution:
    """``G(x, t; N, T)`` from a renormalised Gaussian delta at the north pole."""
    mT = metric_at(hist, T)
    if width is None:
        width = default_width(mT)
    if width < min_width(mT):
        raise DomainError(
            f"delta width {width:.3g} below the resolvable minimum {min_width(mT):.3g} (2 h max a)"
        )
    delta = DeltaApprox(width)
    sol = solve_conjugate(hist, delta.values(mT), T, t_stop, dt, record_every)
    sol.width = width
    sol.meta["T"] = T
    return sol


# ---------------------------------------------------------------------------
# oracles and residuals

def static_kernel_oracle(r: float, d, tau: float):
    """Heat kernel of the round 3-sphere of radius ``r`` at geodesic distance ``d``.

    Spectral sum over the zonal harmonics ``sin((k+1) theta) / sin theta`` with
    eigenvalues ``k (k + 2) / r^2``; terms are kept until ``exp(-k(k+2) tau / r^2)``
    drops below roughly ``1e-20``.
    """
    if not tau > 0:
        raise DomainError(f"oracle needs tau > 0, got {tau}")
    if not r > 0:
        raise DomainError(f"oracle needs r > 0, got {r}")
    d_arr = np.atleast_1d(np.asarray(d, dtype=float))
    if np.any(d_arr < 0) or np.any(d_arr > math.pi * r * (1 + 1e-12)):
        raise DomainError("distance outside [0, pi r]")
    theta = np.clip(d_arr / r, 0.0, math.pi)
    kmax = int(math.sqrt(46.0 * r * r / tau)) + 10
    k = np.arange(kmax + 1)
    weights = (k + 1) * np.exp(-k * (k + 2) * tau / r**2)
    s = np.sin(theta)
    out = np.empty_like(theta)
    regular = s > 1e-8
    if np.any(regular):
        th = theta[regular][:, None]
        out[regular] = (weights * np.sin((k + 1) * th)).sum(axis=1) / s[regular]
    near_n = (~regular) & (theta < 1.0)
    near_s = (~regular) & (theta >= 1.0)
    out[near_n] = float(np.sum(weights * (k + 1)))
    out[near_s] = float(np.sum(weights * (k + 1) * (-1.0) ** k))
    out /= 2.0 * math.pi**2 * r**3
    return out if np.ndim(d) else float(out[0])


@dataclass(frozen=True)
class AdjointResidual:
    residual: float  # relative L2 norm of the forward heat operator applied to G(N, t; ., .)
    reciprocity: float  # |int G(t) delta dmu - int K(T) delta dmu|
    n_times: int


def adjoint_residual(hist: FlowHistory, G: HeatSolution, t_fixed: float, min_age: Optional[float] = None) -> AdjointResidual:
    """Check that ``G(N, t_fixed; z, s)`` solves the forward heat equation in ``(z, s)``.

    The kernel in its second argument pair is produced by the transpose of the
    discrete conjugate propagator, started from the same mollified delta at
    ``(N, t_fixed)``; it is then tested against ``ds K = Delta K`` (``- S K`` on a
    frozen history) with sixth-order space and centred time differences, over
    ages ``s - t_fixed >= min_age`` (default 2 width^2).
    """
    if G.direction != CONJUGATE or G.width is None:
        raise DomainError("adjoint_residual needs a fundamental solution")
    T = float(G.meta.get("T", G.times[-1]))
    G.index_of(t_fixed)
    ts = _time_grid(t_fixed, T, G.dt)
    if ts.size < 4:
        raise DomainError("need at least three steps between t_fixed and T for time differencing")
    ops = _Operators(hist, need_s=hist.frozen)
    delta = DeltaApprox(G.width)
    m0 = metric_at(hist, t_fixed)
    W0, _, _, _ = ops(t_fixed)
    K = delta.values(m0) if not hist.frozen else delta.values(hist.states[0])
    # K(s) is the kernel; the discrete recursion is (W_s - dt L_s [+ dt S W]) K(s+dt) = W_s K(s)
    Ks = [K.copy()]
    for n in range(1, ts.size):
        h_step = ts[n] - ts[n - 1]
        W, k, S, _ = ops(ts[n - 1])
        extra = h_step * S * W if hist.frozen else None
        K = solve_banded((1, 1), _banded(W, k, h_step, extra), W * K, check_finite=False)
        Ks.append(K.copy())
    WT, _, _, mT = ops(ts[-1])
    recip_K = float(np.dot(WT * K, delta.values(mT)))
    recip_G = float(np.dot(W0 * G.at(t_fixed), delta.values(m0)))
    if min_age is None:
        min_age = 2.0 * G.width**2
    num = den = 0.0
    count = 0
    for n in range(1, ts.size - 1):
        if ts[n] - t_fixed < min_age:
            continue
        W, _, S, m = ops(ts[n])
        dK = (Ks[n + 1] - Ks[n - 1]) / (ts[n + 1] - ts[n - 1])
        res = dK - laplacian(m, Ks[n]).v
        if hist.frozen:
            res = res + S * Ks[n]
        num += float(W @ res**2)
        den += float(W @ dK**2)
        count += 1
    if count == 0:
        raise DomainError("no resolved times between t_fixed and T")
    return AdjointResidual(math.sqrt(num / max(den, 1e-300)), abs(recip_K - recip_G), count)


@dataclass(frozen=True)
class HStarResidual:
    solver: float  # L2 norm of H* u
    identity: float  # L2 norm of H*(u ln u) - ((1 + ln u) H* u + S u + |grad u|^2 / u)
    excluded: int  # nodes with u <= floor


def hstar_residual(hist: FlowHistory, u: HeatSolution, t: float, floor: float = 1e-30) -> HStarResidual:
    """Apply ``H* = Delta - S + d/dt`` to a numerical solution at a stored interior time."""
    k = u.index_of(t)
    if k == 0 or k == len(u) - 1:
        raise DomainError("hstar_residual needs a stored time with neighbours on both sides")
    m = metric_at(hist, t) if not hist.frozen else hist.states[0]
    S = curvature(m).S
    W = cell_volumes(m)
    v = u.values[k]
    ok = v > floor
    safe = np.where(ok, v, 1.0)
    dt = u.times[k + 1] - u.times[k - 1]

    def hstar(series):
        return laplacian(m, series[1]).v - S * series[1] + (series[2] - series[0]) / dt

    rows = u.values[k - 1:k + 2]
    h_u = hstar(rows)
    with np.errstate(divide="ignore", invalid="ignore"):
        ulnu = np.where(rows > floor, rows * np.log(np.where(rows > floor, rows, 1.0)), 0.0)
    grad = arclength_derivative(m, v, "even")
    rhs = (1.0 + np.log(safe)) * h_u + S * v + grad**2 / safe
    defect = np.where(ok, hstar(ulnu) - rhs, 0.0)
    solver = math.sqrt(float(W @ np.where(ok, h_u, 0.0) ** 2))
    return HStarResidual(solver, math.sqrt(float(W @ defect**2)), int(np.count_nonzero(~ok)))
