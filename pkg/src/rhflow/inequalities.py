"""Sobolev-type constants and pointwise kernel estimates, measured and verified.

Every check returns a report with its margins; a negative margin beyond the
tolerance is a violation and the offending test field or sample is kept as a
witness.  Checks whose statements assume a fixed manifold run on frozen
snapshots.  Hypotheses of the bounds (``Sy >= 0``, ``lambda_0 > 0``) are evaluated and
recorded; when they fail the report is flagged rather than failed.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import trapezoid
from scipy.linalg import solve_banded

from .flow import FlowHistory, metric_at, sy_nonnegative
from .functionals import lambda0
from .geometry import (
    DomainError,
    MetricState,
    arclength_derivative,
    ball_volume,
    cell_volumes,
    curvature,
    default_tol,
    diameter_along_axis,
    distance_from_pole,
    flux_operator,
    gradient_energy,
)
from .heat import HeatSolution

DIM = 3
N_MODES = 16
PASS, FLAG, FAIL = "pass", "flag", "fail"
HYPOTHESES_UNMET = "hypotheses not satisfied; bound not asserted"


# ---------------------------------------------------------------------------
# report containers

@dataclass
class VerificationReport:
    """Structured record of one check; serialises to the common JSON schema."""

    kind: str
    status: str
    inputs: dict
    margins: dict
    resolution: dict = field(default_factory=dict)
    witness: Optional[dict] = None
    rows: list = field(default_factory=list)

    def to_json_dict(self) -> dict:
        out = {
            "kind": self.kind,
            "status": self.status,
            "inputs": _jsonable(self.inputs),
            "margins": _jsonable(self.margins),
            "resolution": _jsonable(self.resolution),
        }
        if self.witness is not None:
            out["witness"] = _jsonable(self.witness)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        return _rows_to_csv(self.rows)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _rows_to_csv(rows: list, header: Optional[Sequence[str]] = None) -> str:
    buf = io.StringIO()
    cols = list(header) if header is not None else (list(rows[0].keys()) if rows else [])
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for r in rows:
        writer.writerow([f"{r[c]:.17g}" if isinstance(r[c], float) else r[c] for c in cols])
    return buf.getvalue()


def _status(violations: int, hypotheses_ok: bool = True) -> str:
    if not hypotheses_ok:
        return FLAG
    return PASS if violations == 0 else FAIL


# ---------------------------------------------------------------------------
# test-function families

def bump(m: MetricState, center: str = "pole", width: float = 0.3) -> np.ndarray:
    """Gaussian in arclength about the north pole or the equator node."""
    d = distance_from_pole(m)
    d0 = 0.0 if center == "pole" else d[m.grid.N // 2]
    return np.exp(-0.5 * ((d - d0) / width) ** 2)


def random_band_limited(m: MetricState, rng: np.random.Generator, n_modes: int = N_MODES) -> np.ndarray:
    """``sum_k c_k cos(k x)`` over the first ``n_modes`` modes, even at both poles."""
    k = np.arange(n_modes)
    c = rng.normal(size=n_modes) / (1.0 + k)
    return np.cos(np.outer(m.grid.x, k)) @ c


def probe_family(m: MetricState, size: int, seed: int) -> list[tuple[str, np.ndarray]]:
    """Structured probes followed by ``size`` seeded band-limited fields."""
    eig = lambda0(m).eigenfunction.v
    fam = [
        ("constant", np.ones(m.grid.N + 1)),
        ("eigenfunction", eig),
        ("bump_pole", bump(m, "pole", 0.3)),
        ("bump_pole_narrow", bump(m, "pole", 4.0 * m.grid.h * float(np.max(m.a)))),
        ("bump_equator", bump(m, "equator", 0.3)),
    ]
    rng = np.random.default_rng(seed)
    fam.extend((f"random_{i}", random_band_limited(m, rng)) for i in range(size))
    return fam


# ---------------------------------------------------------------------------
# quadratic forms

def sobolev_energy(m: MetricState, v: np.ndarray, S: Optional[np.ndarray] = None) -> float:
    """``int (|grad v|^2 + S v^2 / 4) dmu``."""
    if S is None:
        S = curvature(m).S
    return gradient_energy(m, v) + 0.25 * float(cell_volumes(m) @ (S * v * v))


def _norm(m: MetricState, v: np.ndarray, p: float, W: Optional[np.ndarray] = None) -> float:
    if W is None:
        W = cell_volumes(m)
    return float(W @ np.abs(v) ** p) ** (1.0 / p)


def sobolev_quotient(m: MetricState, v: np.ndarray) -> float:
    n6 = _norm(m, v, 6)
    if n6 == 0:
        raise DomainError("Sobolev quotient of the zero field")
    return sobolev_energy(m, v) / n6**2


@dataclass
class SobolevReport:
    t: float
    A_best: float
    quotient_min: float
    minimiser: np.ndarray
    certificate_min: float  # smallest quotient over the random probes
    family: str
    A: float = float("nan")
    B: float = 0.0
    margins: Optional[np.ndarray] = None
    margin_min: float = float("nan")
    witness: Optional[dict] = None
    status: str = PASS
    tol: float = 0.0

    def to_report(self) -> VerificationReport:
        return VerificationReport(
            "sobolev",
            self.status,
            {"t": self.t, "A": self.A, "B": self.B, "family": self.family},
            {"A_best": self.A_best, "quotient_min": self.quotient_min,
             "certificate_min": self.certificate_min, "margin_min": self.margin_min, "tol": self.tol},
            {"N": len(self.minimiser) - 1},
            self.witness,
        )


def _sobolev_matrix(m: MetricState):
    """Banded ``-L + diag(S W / 4)`` and its matvec."""
    diag, off = flux_operator(m)
    W = cell_volumes(m)
    S = curvature(m).S
    d = -diag + 0.25 * S * W
    e = -off
    ab = np.zeros((3, d.size))
    ab[0, 1:] = e
    ab[1] = d
    ab[2, :-1] = e

    def apply(v):
        out = d * v
        out[:-1] += e * v[1:]
        out[1:] += e * v[:-1]
        return out

    return ab, apply, W


def _minimise_quotient(ab, apply, W, v, max_iter: int, rtol: float = 1e-9, window: int = 50):
    """Preconditioned gradient descent on the ``L^6`` sphere with step halving."""

    def value(z):
        p = float(W @ z**6)
        return float(z @ apply(z)) / p ** (1.0 / 3.0), p

    v = v / float(W @ v**6) ** (1.0 / 6.0)
    q, p = value(v)
    history = [q]
    step = 1.0
    for _ in range(max_iter):
        Av = apply(v)
        grad = 2.0 * Av / p ** (1.0 / 3.0) - 2.0 * q * W * v**5 / p
        d = -solve_banded((1, 1), ab, grad, check_finite=False)
        slope = float(grad @ d)
        if slope >= 0:
            break
        accepted = False
        while step > 1e-12:
            z = v + step * d
            z = z / float(W @ z**6) ** (1.0 / 6.0)
            qz, pz = value(z)
            if qz <= q + 1e-4 * step * slope:
                v, q, p = z, qz, pz
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        step = min(1.0, 2.0 * step)
        history.append(q)
        if len(history) > window and history[-window - 1] - q <= rtol * abs(q):
            break
    return q, v


def best_sobolev_constant(
    m: MetricState, seed: int = 0, n_random_starts: int = 4, n_probes: int = 100, max_iter: int = 4000
) -> SobolevReport:
    """``A_best = 1 / inf_v (int |grad v|^2 + S v^2/4) / ||v||_6^2`` on the discrete space."""
    lam = lambda0(m).lambda0
    if not lam > 0:
        raise DomainError(
            f"quadratic form not positive (lambda_0 = {lam:.3g}); the hypothesis lambda_0 > 0 fails"
        )
    ab, apply, W = _sobolev_matrix(m)
    rng = np.random.default_rng(seed)
    hmin = m.grid.h * float(np.min(m.a))
    d_n = distance_from_pole(m)
    d_s = d_n[-1] - d_n
    starts = [np.ones(m.grid.N + 1)]
    for s in (hmin, 2 * hmin, 4 * hmin, 0.1, 0.3):
        starts.append(np.exp(-0.5 * (d_n / s) ** 2) + 1e-3)
        starts.append(np.exp(-0.5 * (d_s / s) ** 2) + 1e-3)
    starts.extend(random_band_limited(m, rng) for _ in range(n_random_starts))
    best_q, best_v = math.inf, starts[0]
    for v0 in starts:
        q, v = _minimise_quotient(ab, apply, W, v0, max_iter)
        if q < best_q:
            best_q, best_v = q, v
    probes = [random_band_limited(m, rng) for _ in range(n_probes)]
    cert = min(float(z @ apply(z)) / float(W @ z**6) ** (1.0 / 3.0) for z in probes)
    return SobolevReport(
        m.t, 1.0 / best_q, best_q, best_v, cert,
        family=f"{len(starts)} starts (constant, polar bumps, {n_random_starts} random); seed={seed}",
        A=1.0 / best_q, B=0.0, tol=default_tol(m.grid.h),
    )


def certified_pair(reports: Sequence[SobolevReport], slack: float = 1e-6) -> tuple[float, float]:
    """``(max_t A_best (1 + slack), 0)`` over the supplied times."""
    return max(r.A_best for r in reports) * (1.0 + slack), 0.0


def verify_uniform_sobolev(
    hist: FlowHistory, t: float, A: float, B: float, family_size: int = 100, seed: int = 0
) -> SobolevReport:
    """Margins ``A int(|grad v|^2 + S v^2/4) + B ||v||_2^2 - ||v||_6^2`` with ``||v||_6 = 1``."""
    m = metric_at(hist, t)
    S = curvature(m).S
    W = cell_volumes(m)
    tol = default_tol(m.grid.h)
    names, margins, fields = [], [], []
    for name, v in probe_family(m, family_size, seed):
        v = v / _norm(m, v, 6, W)
        margins.append(A * sobolev_energy(m, v, S) + B * float(W @ (v * v)) - 1.0)
        names.append(name)
        fields.append(v)
    margins = np.array(margins)
    k = int(np.argmin(margins))
    violations = int(np.count_nonzero(margins < -tol))
    witness = None
    if violations:
        witness = {"name": names[k], "margin": margins[k], "x": m.grid.x, "v": fields[k]}
    return SobolevReport(
        t, float("nan"), float("nan"), fields[k], float("nan"),
        family=f"{len(names)} fields ({family_size} random, seed={seed})",
        A=A, B=B, margins=margins, margin_min=float(margins[k]), witness=witness,
        status=_status(violations), tol=tol,
    )


def log_sobolev_rhs(
    m: MetricState, v: np.ndarray, eps: float, t: float, A0: float, B0: float, S: Optional[np.ndarray] = None
) -> float:
    if S is None:
        S = curvature(m).S
    energy = 4.0 * gradient_energy(m, v) + float(cell_volumes(m) @ (S * v * v))
    return (
        eps**2 * energy
        - DIM * math.log(eps)
        + (t + eps**2) * B0 / A0
        + 0.5 * DIM * math.log(DIM * A0 / (2.0 * math.e))
    )


def entropy_of_square(m: MetricState, v: np.ndarray) -> float:
    """``int v^2 ln v^2 dmu`` with ``0 ln 0 = 0``."""
    v2 = v * v
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(v2 > 0, v2 * np.log(np.where(v2 > 0, v2, 1.0)), 0.0)
    return float(cell_volumes(m) @ term)


def verify_log_sobolev(
    hist: FlowHistory,
    t: float,
    eps_list: Sequence[float],
    family_size: int = 100,
    A0: float = 1.0,
    B0: float = 0.0,
    seed: int = 0,
) -> VerificationReport:
    """Margins ``RHS - int v^2 ln v^2`` with ``||v||_2 = 1`` for each ``(v, eps)``."""
    m = metric_at(hist, t)
    S = curvature(m).S
    W = cell_volumes(m)
    tol = default_tol(m.grid.h)
    rows, worst = [], None
    for name, v in probe_family(m, family_size, seed):
        v = v / _norm(m, v, 2, W)
        lhs = entropy_of_square(m, v)
        for eps in eps_list:
            if not eps > 0:
                raise DomainError("eps must be positive")
            mg = log_sobolev_rhs(m, v, eps, t, A0, B0, S) - lhs
            rows.append({"t": float(t), "field": name, "eps": float(eps), "margin": float(mg)})
            if worst is None or mg < worst[0]:
                worst = (mg, name, eps, v)
    margins = np.array([r["margin"] for r in rows])
    violations = int(np.count_nonzero(margins < -tol))
    witness = None
    if violations:
        witness = {"field": worst[1], "eps": worst[2], "margin": worst[0], "v": worst[3]}
    return VerificationReport(
        "log_sobolev", _status(violations),
        {"t": t, "A0": A0, "B0": B0, "eps_list": list(eps_list), "family_size": family_size, "seed": seed},
        {"min": float(margins.min()), "violations": violations, "count": int(margins.size), "tol": tol},
        {"N": m.grid.N}, witness, rows,
    )


def nash_constants(m: MetricState, A: float, B: float) -> tuple[float, float]:
    """Constants of the form without the curvature term: ``B + A max(S^+)/4``."""
    return A, B + A * max(0.0, float(np.max(curvature(m).S))) / 4.0


def nash_check(m: MetricState, A: float, B: float, family_size: int = 100, seed: int = 0) -> VerificationReport:
    """``(A ||grad v||^2 + B_l ||v||_2^2) ||v||_1^{4/3} - ||v||_2^{10/3}`` normalised by ``||v||_2^{10/3}``."""
    A_l, B_l = nash_constants(m, A, B)
    W = cell_volumes(m)
    tol = default_tol(m.grid.h)
    rows = []
    for name, v in probe_family(m, family_size, seed):
        n1, n2 = _norm(m, v, 1, W), _norm(m, v, 2, W)
        rhs = (A_l * gradient_energy(m, v) + B_l * n2**2) * n1 ** (4.0 / DIM)
        lhs = n2 ** (2.0 + 4.0 / DIM)
        rows.append({"field": name, "lhs": lhs, "rhs": rhs, "margin": (rhs - lhs) / lhs})
    margins = np.array([r["margin"] for r in rows])
    violations = int(np.count_nonzero(margins < -tol))
    k = int(np.argmin(margins))
    return VerificationReport(
        "nash", _status(violations),
        {"A": A, "B": B, "A_nash": A_l, "B_nash": B_l, "family_size": family_size, "seed": seed},
        {"min": float(margins.min()), "violations": violations, "tol": tol},
        {"N": m.grid.N}, rows[k] if violations else None, rows,
    )


def kernel_upper_bound(A: float, B: float, tau) -> np.ndarray:
    """``(n A)^{n/2} tau^{-n/2} exp(B tau / A)``."""
    tau = np.asarray(tau, dtype=float)
    return (DIM * A) ** (0.5 * DIM) * tau ** (-0.5 * DIM) * np.exp(B * tau / A)


def kernel_upper_check(hist: FlowHistory, G: HeatSolution, A: float, B: float) -> VerificationReport:
    """Compare ``sup_x G(x, t)`` with the fixed-metric kernel bound; frozen histories only."""
    if not hist.frozen:
        raise DomainError("the kernel bound is a fixed-metric statement; pass a frozen history")
    m = hist.states[0]
    A_l, B_l = nash_constants(m, A, B)
    T = float(G.meta.get("T", G.times[-1]))
    tau = T - G.times
    sel = tau >= 16.0 * (G.width or 0.0) ** 2
    sel &= tau > 0
    if not np.any(sel):
        raise DomainError("no resolved times for the kernel bound (need T - t >= 16 width^2)")
    sup = G.values[sel].max(axis=1)
    bound = kernel_upper_bound(A_l, B_l, tau[sel])
    ratio = sup / bound
    rows = [{"tau": float(a), "sup_G": float(b), "bound": float(c)} for a, b, c in zip(tau[sel], sup, bound)]
    violations = int(np.count_nonzero(ratio > 1.0))
    return VerificationReport(
        "kernel_upper", _status(violations),
        {"A": A, "B": B, "A_nash": A_l, "B_nash": B_l},
        {"max_ratio": float(ratio.max()), "violations": violations},
        {"N": m.grid.N, "width": G.width, "times": int(sel.sum())}, None, rows,
    )


# ---------------------------------------------------------------------------
# section-4 pointwise estimates

def bump_solution_data(m: MetricState, width: float = 0.3, floor: float = 1e-2) -> np.ndarray:
    """Positive initial datum: a polar bump on a small constant floor."""
    return floor + bump(m, "pole", width)


def gradient_estimate_check(hist: FlowHistory, u: HeatSolution, tol: float = 1e-6) -> VerificationReport:
    """``sqrt(ln(A/u) / t) - |grad u| / u`` at every node and stored time ``t > 0``."""
    A = float(u.values.max())
    t0 = float(u.times[0])
    rows, worst, total, excluded = [], math.inf, 0, 0
    violations = 0
    for k in range(1, len(u)):
        t = float(u.times[k])
        m = metric_at(hist, t)
        v = u.values[k]
        ok = v > 0
        excluded += int(np.count_nonzero(~ok))
        lnv = np.log(np.where(ok, v, 1.0))
        lhs = np.abs(arclength_derivative(m, lnv, "even"))
        rhs = np.sqrt(np.maximum(math.log(A) - lnv, 0.0) / (t - t0))
        mg = np.where(ok, rhs - lhs, np.inf)
        violations += int(np.count_nonzero(mg < -tol))
        total += int(ok.sum())
        j = int(np.argmin(mg))
        rows.append({"t": t, "min_margin": float(mg[j]), "x": float(m.grid.x[j])})
        worst = min(worst, float(mg[j]))
    return VerificationReport(
        "gradient_estimate", _status(violations),
        {"A": A, "t0": t0, "tol": tol},
        {"min": worst, "violations": violations, "samples": total},
        {"N": u.grid.N, "times": len(u) - 1, "excluded_nonpositive": excluded}, None, rows,
    )


def interpolation_check(
    hist: FlowHistory, u: HeatSolution, delta_list: Sequence[float] = (0.5, 1.0, 2.0), tol: float = 1e-6
) -> VerificationReport:
    """``A^{d/(1+d)} u(x)^{1/(1+d)} exp(dist^2 / (4 t d)) - u(y)`` for ``y`` at the pole and equator."""
    A = float(u.values.max())
    t0 = float(u.times[0])
    rows, violations, worst = [], 0, math.inf
    for k in range(1, len(u)):
        t = float(u.times[k]) - t0
        m = metric_at(hist, float(u.times[k]))
        d = distance_from_pole(m)
        v = u.values[k]
        for label, j in (("pole", 0), ("equator", m.grid.N // 2)):
            dist2 = (d - d[j]) ** 2
            for delta in delta_list:
                with np.errstate(over="ignore"):
                    growth = np.exp(dist2 / (4 * t * delta))
                rhs = A ** (delta / (1 + delta)) * np.maximum(v, 0.0) ** (1 / (1 + delta)) * growth
                mg = rhs - v[j]
                i = int(np.argmin(mg))
                violations += int(np.count_nonzero(mg < -tol))
                worst = min(worst, float(mg[i]))
                rows.append({"t": float(u.times[k]), "y": label, "delta": float(delta), "min_margin": float(mg[i])})
    return VerificationReport(
        "interpolation", _status(violations),
        {"A": A, "delta_list": list(delta_list), "tol": tol},
        {"min": worst, "violations": violations},
        {"N": u.grid.N, "times": len(u) - 1}, None, rows,
    )


def _resolved_times(G: HeatSolution, hist: FlowHistory) -> tuple[float, np.ndarray]:
    """Indices with ``16 width^2 <= T - t <= diam(g(T))^2``."""
    T = float(G.meta.get("T", G.times[-1]))
    diam2 = diameter_along_axis(metric_at(hist, T)) ** 2
    tau = T - G.times
    w2 = (G.width or 0.0) ** 2
    return T, np.nonzero((tau >= 16.0 * w2) & (tau > 0) & (tau <= diam2))[0]


def mean_value_check(hist: FlowHistory, G: HeatSolution, r: float, t0: Optional[float] = None) -> VerificationReport:
    """Measured constants of the mean-value inequalities on polar cylinders.

    The conjugate solution runs backward, so its cylinder at ``(N, t0)`` is
    ``B(N, r) x [t0, t0 + r^2]``; the half cylinder is ``B(N, r/2) x [t0, t0 + r^2/4]``.
    ``c_L2 = sup_half u^2 r^5 / int int_full u^2`` and ``c_L1`` likewise with ``u``.
    """
    if t0 is None:
        t0 = float(G.times[0])
    if t0 < G.times[0] - 1e-12 or t0 + r * r > G.times[-1] + 1e-12:
        raise DomainError(f"cylinder [{t0}, {t0 + r * r}] exits the solution window")
    full = np.nonzero((G.times >= t0 - 1e-12) & (G.times <= t0 + r * r + 1e-12))[0]
    if full.size < 3:
        raise DomainError("too few stored times inside the cylinder")
    sup_l1 = sup_l2 = 0.0
    int_l1, int_l2 = np.zeros(full.size), np.zeros(full.size)
    for j, k in enumerate(full):
        m = metric_at(hist, float(G.times[k]))
        d = distance_from_pole(m)
        W = cell_volumes(m)
        v = G.values[k]
        inside = d <= r
        int_l1[j] = float(W[inside] @ v[inside])
        int_l2[j] = float(W[inside] @ v[inside] ** 2)
        if G.times[k] <= t0 + 0.25 * r * r + 1e-12:
            half = d <= 0.5 * r
            sup_l1 = max(sup_l1, float(v[half].max()))
            sup_l2 = max(sup_l2, float(v[half].max() ** 2))
    ts = G.times[full]
    c_l2 = sup_l2 * r ** (2 + DIM) / float(trapezoid(int_l2, ts))
    c_l1 = sup_l1 * r ** (2 + DIM) / float(trapezoid(int_l1, ts))
    sy_ok = all(sy_nonnegative(hist))
    return VerificationReport(
        "mean_value", PASS if sy_ok and math.isfinite(c_l1) and math.isfinite(c_l2) else (FLAG if not sy_ok else FAIL),
        {"r": r, "t0": t0, "sy_nonnegative": sy_ok},
        {"c_L2": c_l2, "c_L1": c_l1},
        {"N": G.grid.N, "width": G.width, "times": int(full.size)},
    )


def on_diagonal_check(hist: FlowHistory, G: HeatSolution) -> VerificationReport:
    """``c_meas = sup G (T - t)^{3/2}`` over all nodes at resolved times."""
    T, idx = _resolved_times(G, hist)
    if idx.size == 0:
        raise DomainError("no resolved times for the on-diagonal check")
    tau = T - G.times[idx]
    prod = G.values[idx].max(axis=1) * tau ** (0.5 * DIM)
    k = int(np.argmax(prod))
    masses = G.masses[idx]
    rows = [{"t": float(T - a), "tau": float(a), "G_sup_tau32": float(b)} for a, b in zip(tau, prod)]
    return VerificationReport(
        "on_diagonal", PASS if math.isfinite(prod[k]) else FAIL,
        {"T": T},
        {"c_meas": float(prod[k]), "tau_at_sup": float(tau[k]),
         "mass_defect": float(np.max(np.abs(masses - 1.0)))},
        {"N": G.grid.N, "width": G.width, "times": int(idx.size)}, None, rows,
    )


@dataclass
class GaussianReport:
    t: np.ndarray
    x: np.ndarray
    G: np.ndarray
    d: np.ndarray
    ball: np.ndarray
    ratio: np.ndarray
    c1: float
    sup_ratio: float
    hypotheses: dict
    status: str
    resolution: dict

    CSV_HEADER = ("t", "x", "G", "d", "ball", "ratio")

    def to_csv(self) -> str:
        rows = [dict(zip(self.CSV_HEADER, map(float, r))) for r in zip(self.t, self.x, self.G, self.d, self.ball, self.ratio)]
        return _rows_to_csv(rows, self.CSV_HEADER)

    def to_report(self) -> VerificationReport:
        margins = {"sup_ratio": self.sup_ratio, "samples": int(self.ratio.size)}
        if self.status == FLAG:
            margins["note"] = HYPOTHESES_UNMET
        k = int(np.argmax(self.ratio)) if self.ratio.size else None
        witness = None
        if k is not None:
            witness = {"t": self.t[k], "x": self.x[k], "d": self.d[k], "G": self.G[k]}
        return VerificationReport(
            "gaussian", self.status, {"c1": self.c1, "hypotheses": self.hypotheses},
            margins, self.resolution, witness,
        )


def hypothesis_flags(hist: FlowHistory) -> dict:
    sy = sy_nonnegative(hist)
    lam = lambda0(hist.states[0]).lambda0
    return {"sy_nonnegative": all(sy), "sy_violations": int(len(sy) - sum(sy)),
            "lambda0_initial": lam, "lambda0_positive": lam > 0}


def gaussian_bound_check(
    hist: FlowHistory, G: HeatSolution, c1: float = 1.0 / 16.0, max_times: int = 64
) -> GaussianReport:
    """``G |B(N, sqrt(T-t), T)| exp(c1 d^2 / (T-t))`` over resolved samples with ``d >= 4 width``."""
    hyp = hypothesis_flags(hist)
    ok = hyp["sy_nonnegative"] and hyp["lambda0_positive"]
    T, idx = _resolved_times(G, hist)
    if idx.size > max_times:
        idx = idx[np.linspace(0, idx.size - 1, max_times).round().astype(int)]
    mT = metric_at(hist, T)
    d = distance_from_pole(mT)
    width = G.width or 0.0
    far = d >= 4.0 * width
    ts, xs, gs, ds, bs, rs = [], [], [], [], [], []
    for k in idx:
        tau = T - float(G.times[k])
        vol = ball_volume(mT, math.sqrt(tau))
        g = G.values[k][far]
        ratio = g * vol * np.exp(c1 * d[far] ** 2 / tau)
        ts.append(np.full(g.size, G.times[k]))
        xs.append(mT.grid.x[far])
        gs.append(g)
        ds.append(d[far])
        bs.append(np.full(g.size, vol))
        rs.append(ratio)
    cat = (lambda a: np.concatenate(a) if a else np.zeros(0))
    ratio = cat(rs)
    sup = float(ratio.max()) if ratio.size else float("nan")
    status = FLAG if not ok else (PASS if math.isfinite(sup) else FAIL)
    return GaussianReport(
        cat(ts), cat(xs), cat(gs), cat(ds), cat(bs), ratio, c1, sup, hyp, status,
        {"N": G.grid.N, "width": width, "min_distance": 4.0 * width, "times": int(len(idx)),
         "tau_min": 16.0 * width**2},
    )
