"""Entropies F, W and the generalised W, their production integrals, and lambda_0.

Throughout ``n = 3``; the potential is ``f = -ln u - (3/2) ln(4 pi tau)`` so that
``u = (4 pi tau)^{-3/2} e^{-f}``.  Integrands are evaluated only where
``u > U_FLOOR``; delta-started solutions underflow far from their centre.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve_banded

from .flow import FlowHistory, metric_at
from .geometry import (
    DomainError,
    MetricState,
    ScalarField,
    _values,
    cell_volumes,
    curvature,
    face_conductances,
    flux_operator,
    gradient_energy,
    hessian_eigenvalues,
    laplacian,
    arclength_derivative,
)
from .heat import HeatSolution

DIM = 3
U_FLOOR = 1e-30
TOL_EIG = 1e-8
MAX_ITER = 500
ENTROPY_RESOLVED = 32.0  # in units of width^2
SQRT_2PI = math.sqrt(2.0 * math.pi)


def _positive(u, m: MetricState, what: str = "u") -> np.ndarray:
    v = _values(u, m.grid, getattr(u, "parity", "even")).astype(float)
    if np.any(v <= 0):
        bad = int(np.argmax(v <= 0))
        raise DomainError(f"{what} must be positive; node {bad} has value {v[bad]:.3g}")
    return v


def _floored(u, m: MetricState) -> tuple[np.ndarray, np.ndarray]:
    """Values and the mask of nodes above the positivity floor."""
    v = _values(u, m.grid, getattr(u, "parity", "even")).astype(float)
    if np.any(v < -1e-12):
        bad = int(np.argmin(v))
        raise DomainError(f"u must be nonnegative; node {bad} has value {v[bad]:.3g}")
    return v, v > U_FLOOR


def _check_tau(tau: float) -> None:
    if not tau > 0:
        raise DomainError(f"tau must be positive, got {tau}")


def potential_f(m: MetricState, u, tau: float) -> ScalarField:
    _check_tau(tau)
    v = _positive(u, m)
    return ScalarField(m.grid, -np.log(v) - 0.5 * DIM * math.log(4.0 * math.pi * tau))


def density_from_potential(f, tau: float) -> np.ndarray:
    _check_tau(tau)
    fv = np.asarray(getattr(f, "v", f), dtype=float)
    return np.exp(-fv) * (4.0 * math.pi * tau) ** (-0.5 * DIM)


def _log_u(v: np.ndarray, ok: np.ndarray) -> np.ndarray:
    return np.log(np.where(ok, v, U_FLOOR))


def _grad_log_sq(m: MetricState, v: np.ndarray, ok: np.ndarray) -> np.ndarray:
    """``|grad ln u|^2 = |grad f|^2``, zero below the floor."""
    g = arclength_derivative(m, _log_u(v, ok), "even")
    return np.where(ok, g * g, 0.0)


def entropy_F(m: MetricState, u) -> float:
    """``int (S u + |grad u|^2 / u) dmu``, the gradient term as ``|grad ln u|^2 u``."""
    v, ok = _floored(u, m)
    S = curvature(m).S
    W = cell_volumes(m)
    integrand = np.where(ok, (S + _grad_log_sq(m, v, ok)) * v, 0.0)
    return float(W @ integrand)


def _w_integral(m: MetricState, u, tau: float, coeff: float) -> float:
    _check_tau(tau)
    v, ok = _floored(u, m)
    S = curvature(m).S
    W = cell_volumes(m)
    f = -_log_u(v, ok) - 0.5 * DIM * math.log(4.0 * math.pi * tau)
    integrand = np.where(ok, (coeff * (S + _grad_log_sq(m, v, ok)) + f - DIM) * v, 0.0)
    return float(W @ integrand)


def entropy_W(m: MetricState, u, tau: float) -> float:
    """``int [tau (S + |grad f|^2) + f - n] u dmu``."""
    return _w_integral(m, u, tau, tau)


def entropy_W_gen(m: MetricState, u, tau: float, a_param: float) -> float:
    """Generalised entropy with coefficient ``a^2 tau / (2 pi)`` on ``S + |grad f|^2``."""
    if a_param < 0:
        raise DomainError("a_param must be nonnegative")
    return _w_integral(m, u, tau, a_param**2 * tau / (2.0 * math.pi))


def _production_terms(m: MetricState, u, tau: Optional[float]):
    """Pointwise ``(radial, spherical, phi)`` pieces of the production integrands."""
    v, ok = _floored(u, m)
    c = curvature(m)
    lnu = _log_u(v, ok)
    # f = -ln u + const, so Hess f = -Hess ln u and grad f = -grad ln u
    h_rad, h_sph = hessian_eigenvalues(m, -lnu)
    df = -arclength_derivative(m, lnu, "even")
    dphi = c.dphi
    lap_phi = laplacian(m, m.phi).v
    shift = 0.0 if tau is None else 1.0 / (2.0 * tau)
    rad = c.s_rad + h_rad - shift
    sph = c.s_sph + h_sph - shift
    phi_term = lap_phi - dphi * df
    return v, ok, rad, sph, phi_term


def production_F(m: MetricState, u) -> float:
    """``2 int (|Sy + Hess f|^2 + 2 |Delta phi - <grad phi, grad f>|^2) u dmu``."""
    v, ok, rad, sph, ph = _production_terms(m, u, None)
    integrand = np.where(ok, 2.0 * (rad**2 + 2.0 * sph**2 + 2.0 * ph**2) * v, 0.0)
    return float(cell_volumes(m) @ integrand)


def production_W(m: MetricState, u, tau: float) -> float:
    """``int (2 tau |Sy + Hess f - g/(2 tau)|^2 + 4 tau |Delta phi - <grad phi, grad f>|^2) u dmu``."""
    _check_tau(tau)
    v, ok, rad, sph, ph = _production_terms(m, u, tau)
    integrand = np.where(ok, (2.0 * tau * (rad**2 + 2.0 * sph**2) + 4.0 * tau * ph**2) * v, 0.0)
    return float(cell_volumes(m) @ integrand)


def production_W_gen(m: MetricState, u, tau: float, a_param: float) -> float:
    """Lower bound claimed for the rate of the generalised entropy:
    ``(a^2 tau / pi) int (|Sy + Hess f - g/(2 tau)|^2 + 2 |Delta phi - <grad phi, grad f>|^2) u``."""
    return a_param**2 / (2.0 * math.pi) * production_W(m, u, tau)


# ---------------------------------------------------------------------------
# lambda_0

@dataclass
class EigenResult:
    lambda0: float
    eigenfunction: ScalarField
    residual: float
    iterations: int = 0


def rayleigh_quotient(m: MetricState, v) -> float:
    """``int (4 |grad v|^2 + S v^2) dmu / int v^2 dmu``."""
    vals = _values(v, m.grid, "even")
    W = cell_volumes(m)
    S = curvature(m).S
    norm2 = float(W @ vals**2)
    if norm2 == 0:
        raise DomainError("Rayleigh quotient of the zero field")
    return (4.0 * gradient_energy(m, vals) + float(W @ (S * vals**2))) / norm2


def _symmetric_operator(m: MetricState):
    """Tridiagonal ``W^{-1/2} (-4 L + S W) W^{-1/2}`` as (diag, off)."""
    W = cell_volumes(m)
    S = curvature(m).S
    diag, off = flux_operator(m)
    r = 1.0 / np.sqrt(W)
    return (-4.0 * diag + S * W) * r * r, -4.0 * off * r[:-1] * r[1:], W


def lambda0(m: MetricState, tol: float = TOL_EIG, max_iter: int = MAX_ITER) -> EigenResult:
    """Smallest eigenvalue of the discrete ``-4 Delta + S`` by shifted inverse iteration."""
    d, e, W = _symmetric_operator(m)
    S = curvature(m).S
    sigma = min(0.0, float(np.min(S))) - 1.0
    ab = np.zeros((3, d.size))
    ab[0, 1:] = e
    ab[1] = d - sigma
    ab[2, :-1] = e
    y = np.sqrt(W)
    y /= np.linalg.norm(y)

    def apply(z):
        out = d * z
        out[:-1] += e * z[1:]
        out[1:] += e * z[:-1]
        return out

    lam, res = float("nan"), float("inf")
    for it in range(1, max_iter + 1):
        y = solve_banded((1, 1), ab, y, check_finite=False)
        y /= np.linalg.norm(y)
        Cy = apply(y)
        lam = float(y @ Cy)
        res = float(np.linalg.norm(Cy - lam * y))
        if res <= tol * max(1.0, abs(lam)):
            break
    else:
        raise DomainError(f"inverse iteration did not converge in {max_iter} steps (residual {res:.3g})")
    v = y / np.sqrt(W)
    if v[np.argmax(np.abs(v))] < 0:
        v = -v
    return EigenResult(lam, ScalarField(m.grid, v), res, it)


# ---------------------------------------------------------------------------
# monotonicity along a trajectory

A_PARAMS = (0.0, 1.0, SQRT_2PI, 5.0)
CSV_HEADER = "t,tau,F,dFdt,prodF,W,dWdt,prodW,res_F,res_W"


def _rates(t: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Centred differences on a possibly non-uniform grid; one-sided at the ends."""
    if t.size < 2:
        return np.full_like(y, np.nan)
    return np.gradient(y, t, edge_order=1)


@dataclass
class EntropyReport:
    times: np.ndarray
    tau: np.ndarray
    F: np.ndarray
    W: np.ndarray
    dFdt: np.ndarray
    dWdt: np.ndarray
    prodF: np.ndarray
    prodW: np.ndarray
    Wgen: dict = field(default_factory=dict)  # a -> values
    dWgen_dt: dict = field(default_factory=dict)
    prodWgen: dict = field(default_factory=dict)
    below_floor: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    tol_mono: float = 1e-6

    @property
    def res_F(self) -> np.ndarray:
        return np.abs(self.dFdt - self.prodF) / np.maximum(1.0, np.abs(self.prodF))

    @property
    def res_W(self) -> np.ndarray:
        return np.abs(self.dWdt - self.prodW) / np.maximum(1.0, np.abs(self.prodW))

    def interior(self) -> slice:
        """Indices with centred rates."""
        return slice(1, len(self.times) - 1)

    def flags(self) -> list[str]:
        out = []
        sl = self.interior()
        if np.any(self.dFdt[sl] < -self.tol_mono):
            out.append("F rate negative")
        if np.any(self.dWdt[sl] < -self.tol_mono):
            out.append("W rate negative")
        return out

    def wgen_margins(self) -> dict:
        """``dWgen/dt + tol - claimed lower bound`` per parameter (interior times)."""
        sl = self.interior()
        return {a: self.dWgen_dt[a][sl] + self.tol_mono - self.prodWgen[a][sl] for a in self.Wgen}

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(CSV_HEADER + "\n")
        rf, rw = self.res_F, self.res_W
        for k in range(len(self.times)):
            row = (self.times[k], self.tau[k], self.F[k], self.dFdt[k], self.prodF[k],
                   self.W[k], self.dWdt[k], self.prodW[k], rf[k], rw[k])
            buf.write(",".join(f"{x:.17g}" for x in row) + "\n")
        return buf.getvalue()


def monotonicity_trace(
    hist: FlowHistory,
    G: HeatSolution,
    tau_offset: float,
    a_params: Sequence[float] = A_PARAMS,
    t_window: Optional[tuple] = None,
    stride: int = 1,
) -> EntropyReport:
    """Entropies, their finite-difference rates and production integrals along ``G``.

    ``tau = tau_offset + T - t`` where ``T`` is the terminal time of ``G``.  The
    default window drops ``T - t < ENTROPY_RESOLVED * width^2``, where the
    smoothed delta has not yet relaxed to a kernel profile.
    """
    T = float(G.meta.get("T", G.times[-1]))
    idx = np.arange(0, len(G.times), stride)
    if t_window is None and G.width:
        t_window = (-math.inf, T - ENTROPY_RESOLVED * G.width**2)
    if t_window is not None:
        lo, hi = t_window
        idx = idx[(G.times[idx] >= lo - 1e-12) & (G.times[idx] <= hi + 1e-12)]
    times = G.times[idx]
    tau = tau_offset + (T - times)
    if np.any(tau <= 0):
        raise DomainError("tau <= 0 inside the monotonicity window")
    K = len(idx)
    F, Wv, pF, pW = (np.zeros(K) for _ in range(4))
    gens = {a: np.zeros(K) for a in a_params}
    below = np.zeros(K, dtype=int)
    for j, k in enumerate(idx):
        m = hist.states[0] if hist.frozen else metric_at(hist, float(G.times[k]))
        u = G.values[k]
        below[j] = int(np.count_nonzero(u <= U_FLOOR))
        F[j] = entropy_F(m, u)
        Wv[j] = entropy_W(m, u, tau[j])
        pF[j] = production_F(m, u)
        pW[j] = production_W(m, u, tau[j])
        for a in a_params:
            gens[a][j] = entropy_W_gen(m, u, tau[j], a)
    dF, dW = _rates(times, F), _rates(times, Wv)
    return EntropyReport(
        times, tau, F, Wv, dF, dW, pF, pW,
        Wgen=gens,
        dWgen_dt={a: _rates(times, gens[a]) for a in a_params},
        prodWgen={a: a**2 / (2.0 * math.pi) * pW for a in a_params},
        below_floor=below,
    )
