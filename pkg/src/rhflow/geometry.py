"""Discrete warped-product geometry on S^3.

The metric is ``g = a(x)^2 dx^2 + f(x)^2 g_{S^2}`` on the coordinate interval
``[0, pi]``, with the poles at the two endpoints.  Pointwise derivatives use
sixth-order centred stencils on ghost nodes filled by reflection across the
poles (``a`` and ``phi`` even, ``f`` odd).  Integrals and the heat operators use
a finite-volume discretisation whose cell volumes are built from the same
nodal data; see :func:`cell_volumes` and :func:`flux_operator`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Union

import numpy as np
from scipy.interpolate import CubicSpline

FOUR_PI = 4.0 * math.pi
VOLUME_UNIT_S3 = 2.0 * math.pi**2

# sixth-order centred stencils, written as weights on symmetric pairs
_D1 = (3.0 / 4.0, -3.0 / 20.0, 1.0 / 60.0)
_D2 = (3.0 / 2.0, -3.0 / 20.0, 1.0 / 90.0)
_GHOSTS = 3


class DomainError(ValueError):
    """Input outside the domain of a geometric operation."""


def default_tol(h: float) -> float:
    return 1e-8 + 10.0 * h * h


@dataclass(frozen=True)
class Grid:
    """Uniform grid of ``N + 1`` nodes on ``[0, pi]``."""

    N: int

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 2 * _GHOSTS:
            raise DomainError(f"grid needs an integer N >= {2 * _GHOSTS}, got {self.N}")

    @cached_property
    def x(self) -> np.ndarray:
        x = np.linspace(0.0, math.pi, self.N + 1)
        x[0], x[-1] = 0.0, math.pi
        x.setflags(write=False)
        return x

    @property
    def h(self) -> float:
        return math.pi / self.N


@dataclass(frozen=True)
class ScalarField:
    """Axisymmetric function on the grid; ``parity`` is its reflection type at the poles."""

    grid: Grid
    v: np.ndarray
    parity: str = "even"

    def __post_init__(self):
        if self.parity not in ("even", "odd"):
            raise DomainError(f"parity must be 'even' or 'odd', got {self.parity!r}")
        v = np.asarray(self.v, dtype=float)
        if v.shape != (self.grid.N + 1,):
            raise DomainError(f"field has shape {v.shape}, grid needs {(self.grid.N + 1,)}")
        object.__setattr__(self, "v", v)


FieldLike = Union[ScalarField, np.ndarray]


def _values(u: FieldLike, grid: Grid, parity: str = "even") -> np.ndarray:
    if isinstance(u, ScalarField):
        if u.grid.N != grid.N:
            raise DomainError("field and metric live on different grids")
        if u.parity != parity:
            raise DomainError(f"expected a field of {parity} parity, got {u.parity}")
        return u.v
    v = np.asarray(u, dtype=float)
    if v.shape != (grid.N + 1,):
        raise DomainError(f"field has shape {v.shape}, grid needs {(grid.N + 1,)}")
    return v


@dataclass(frozen=True)
class MetricState:
    """Warped-product metric ``(a, f)`` and scalar field ``phi`` at time ``t``.

    ``s_override`` replaces the coupled curvature by a constant isotropic tensor
    with trace ``s_override``.  It exists only to build artificial test
    backgrounds (for example ``S = 0``) and is never produced by the flow.
    """

    t: float
    grid: Grid
    a: np.ndarray
    f: np.ndarray
    phi: np.ndarray
    s_override: Optional[float] = None

    def __post_init__(self):
        n = self.grid.N + 1
        for name in ("a", "f", "phi"):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.shape != (n,):
                raise DomainError(f"{name} has shape {arr.shape}, expected {(n,)}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def scaled(self, lam: float) -> "MetricState":
        """The metric ``lam^2 g`` with the same scalar field."""
        so = None if self.s_override is None else self.s_override / lam**2
        return MetricState(self.t, self.grid, lam * self.a, lam * self.f, self.phi, so)

    def with_override(self, s_value: Optional[float]) -> "MetricState":
        return MetricState(self.t, self.grid, self.a, self.f, self.phi, s_value)

    def check_positive(self) -> None:
        bad = np.flatnonzero(~(self.a > 0))
        if bad.size:
            i = int(bad[0])
            raise DomainError(f"lapse a must be positive: a[{i}] = {self.a[i]!r}")
        bad = np.flatnonzero(~(self.f[1:-1] > 0))
        if bad.size:
            i = int(bad[0]) + 1
            raise DomainError(f"warp f must be positive off the poles: f[{i}] = {self.f[i]!r}")

    def invariant_violations(self, C: float = 10.0) -> list[str]:
        """List broken invariants; pole checks use one-sided second-order differences."""
        h = self.grid.h
        tol = 1e-8 + C * h * h
        problems = []
        if not np.all(self.a > 0):
            problems.append("a not positive")
        if not np.all(self.f[1:-1] > 0):
            problems.append("f not positive in the interior")
        if self.f[0] != 0.0 or self.f[-1] != 0.0:
            problems.append("f nonzero at a pole")
        fa, fb = self.f, self.f[::-1]
        slope0 = (-3 * fa[0] + 4 * fa[1] - fa[2]) / (2 * h) / self.a[0]
        slopeN = -(-3 * fb[0] + 4 * fb[1] - fb[2]) / (2 * h) / self.a[-1]
        if abs(slope0 - 1.0) > tol:
            problems.append(f"north pole not regular: Df = {slope0:.3e}")
        if abs(slopeN + 1.0) > tol:
            problems.append(f"south pole not regular: Df = {slopeN:.3e}")
        p, q = self.phi, self.phi[::-1]
        scale = max(1.0, float(np.max(np.abs(p))))
        if abs(-3 * p[0] + 4 * p[1] - p[2]) / (2 * h) > tol * scale:
            problems.append("phi not even at the north pole")
        if abs(-3 * q[0] + 4 * q[1] - q[2]) / (2 * h) > tol * scale:
            problems.append("phi not even at the south pole")
        return problems


# ---------------------------------------------------------------------------
# stencils

def _extend(v: np.ndarray, parity: str) -> np.ndarray:
    s = 1.0 if parity == "even" else -1.0
    return np.concatenate([s * v[_GHOSTS:0:-1], v, s * v[-2:-2 - _GHOSTS:-1]])


def ddx(v: np.ndarray, parity: str, h: float) -> np.ndarray:
    """First x-derivative of a field with the given pole parity."""
    e = _extend(v, parity)
    n = v.size
    g = _GHOSTS
    out = np.zeros(n)
    for k, c in enumerate(_D1, start=1):
        out += c * (e[g + k:g + k + n] - e[g - k:g - k + n])
    return out / h


def d2dx2(v: np.ndarray, parity: str, h: float) -> np.ndarray:
    """Second x-derivative; exactly zero on constants."""
    e = _extend(v, parity)
    n = v.size
    g = _GHOSTS
    out = np.zeros(n)
    for k, c in enumerate(_D2, start=1):
        out += c * ((e[g + k:g + k + n] + e[g - k:g - k + n]) - 2.0 * v)
    return out / (h * h)


def arclength_derivative(m: MetricState, v: np.ndarray, parity: str = "even") -> np.ndarray:
    """``D v = v_x / a``."""
    return ddx(v, parity, m.grid.h) / m.a


def _second_arclength(m: MetricState, v: np.ndarray, parity: str) -> np.ndarray:
    h = m.grid.h
    vx = ddx(v, parity, h)
    vxx = d2dx2(v, parity, h)
    ax = ddx(m.a, "even", h)
    return (vxx - ax / m.a * vx) / m.a**2


# ---------------------------------------------------------------------------
# curvature

@dataclass(frozen=True)
class CurvatureFields:
    ric_rad: np.ndarray
    ric_sph: np.ndarray
    R: np.ndarray
    s_rad: np.ndarray
    s_sph: np.ndarray
    S: np.ndarray
    dphi: np.ndarray  # arclength derivative of phi

    @property
    def sy_norm2(self) -> np.ndarray:
        """``|Sy|^2`` with the spherical eigenvalue counted twice."""
        return self.s_rad**2 + 2.0 * self.s_sph**2


def warp_ratio(m: MetricState) -> np.ndarray:
    """``Df / f`` with the pole limit ``1/s`` replaced by the regular factor used in
    Hessians and Laplacians (callers handle the poles separately)."""
    h = m.grid.h
    Df = ddx(m.f, "odd", h) / m.a
    out = np.zeros_like(Df)
    out[1:-1] = Df[1:-1] / m.f[1:-1]
    return out


def curvature(m: MetricState) -> CurvatureFields:
    """Ricci eigenvalues, scalar curvature and the coupled tensor ``Sy``."""
    m.check_positive()
    h = m.grid.h
    a, f = m.a, m.f
    fx = ddx(f, "odd", h)
    Df = fx / a
    D2f = _second_arclength(m, f, "odd")

    k_rad = np.empty_like(f)
    k_sph = np.empty_like(f)
    inner = slice(1, -1)
    k_rad[inner] = -D2f[inner] / f[inner]
    k_sph[inner] = (1.0 - Df[inner] ** 2) / f[inner] ** 2
    # pole limits: l'Hopital on D^2 f / f; a smooth pole is isotropic
    dD2f = ddx(D2f, "odd", h)
    for i in (0, -1):
        k_rad[i] = -dD2f[i] / fx[i]
        k_sph[i] = k_rad[i]

    ric_rad = 2.0 * k_rad
    ric_sph = k_rad + k_sph
    R = ric_rad + 2.0 * ric_sph
    dphi = ddx(m.phi, "even", h) / a
    if m.s_override is not None:
        s = np.full_like(f, m.s_override / 3.0)
        return CurvatureFields(ric_rad, ric_sph, R, s, s.copy(), np.full_like(f, float(m.s_override)), dphi)
    s_rad = ric_rad - 2.0 * dphi**2
    s_sph = ric_sph
    S = R - 2.0 * dphi**2
    return CurvatureFields(ric_rad, ric_sph, R, s_rad, s_sph, S, dphi)


def laplacian(m: MetricState, u: FieldLike) -> ScalarField:
    """Laplace-Beltrami operator of an even axisymmetric field."""
    v = _values(u, m.grid, "even")
    D2u = _second_arclength(m, v, "even")
    Du = ddx(v, "even", m.grid.h) / m.a
    out = D2u + 2.0 * warp_ratio(m) * Du
    out[0] = 3.0 * D2u[0]
    out[-1] = 3.0 * D2u[-1]
    return ScalarField(m.grid, out)


def hessian_eigenvalues(m: MetricState, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Radial and spherical eigenvalues of the Hessian of an even field."""
    D2v = _second_arclength(m, v, "even")
    sph = warp_ratio(m) * (ddx(v, "even", m.grid.h) / m.a)
    sph[0], sph[-1] = D2v[0], D2v[-1]
    return D2v, sph


# ---------------------------------------------------------------------------
# finite-volume measure and Dirichlet form

def cell_volumes(m: MetricState) -> np.ndarray:
    """Volumes ``4 pi int a f^2 dx`` of the dual cells around each node.

    Each cell integral uses the quadratic interpolant of ``a f^2``; the pole
    cells are the half-cells ``[0, h/2]`` and ``[pi - h/2, pi]``.
    """
    h = m.grid.h
    q = m.a * m.f**2
    w = np.empty_like(q)
    w[1:-1] = h * (q[:-2] + 22.0 * q[1:-1] + q[2:]) / 24.0
    w[0] = q[0] * h / 2 + (q[1] - q[0]) * h / 24.0
    w[-1] = q[-1] * h / 2 + (q[-2] - q[-1]) * h / 24.0
    return FOUR_PI * w


def face_conductances(m: MetricState) -> np.ndarray:
    """``4 pi (f^2 / a) / h`` at the N cell faces, from midpoint-interpolated a and f."""
    fm = 0.5 * (m.f[1:] + m.f[:-1])
    am = 0.5 * (m.a[1:] + m.a[:-1])
    return FOUR_PI * fm**2 / am / m.grid.h


def flux_operator(m: MetricState) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric tridiagonal ``L`` with ``(L u)_i ~ W_i (Delta u)_i``.

    Returns ``(diag, off)``; ``off[i]`` couples nodes ``i`` and ``i + 1``.
    Rows sum to zero, so constants are in the kernel exactly.
    """
    k = face_conductances(m)
    diag = np.zeros(m.grid.N + 1)
    diag[:-1] -= k
    diag[1:] -= k
    return diag, k


def apply_flux_operator(m: MetricState, v: np.ndarray) -> np.ndarray:
    k = face_conductances(m)
    flux = k * np.diff(v)
    out = np.zeros_like(v)
    out[:-1] += flux
    out[1:] -= flux
    return out


def integrate(m: MetricState, u: FieldLike) -> float:
    """``int_M u dmu`` on the finite-volume measure (second order)."""
    return float(np.dot(cell_volumes(m), _values(u, m.grid, getattr(u, "parity", "even"))))


def gradient_energy(m: MetricState, v: FieldLike) -> float:
    """Dirichlet energy ``int |grad v|^2 dmu``, summation-by-parts partner of the flux Laplacian."""
    vals = _values(v, m.grid, "even")
    return float(np.dot(face_conductances(m), np.diff(vals) ** 2))


def lp_norm(m: MetricState, v: FieldLike, p: float) -> float:
    if not p >= 1:
        raise DomainError(f"L^p norm needs p >= 1, got {p}")
    vals = np.abs(_values(v, m.grid, getattr(v, "parity", "even")))
    total = float(np.dot(cell_volumes(m), vals**p))
    return total ** (1.0 / p)


# ---------------------------------------------------------------------------
# distances and balls centred at the north pole

def _arclength_poly(m: MetricState):
    return CubicSpline(m.grid.x, m.a).antiderivative()


def distance_from_pole(m: MetricState) -> np.ndarray:
    """``d(N, x_i)`` at every node."""
    d = _arclength_poly(m)(m.grid.x)
    d[0] = 0.0
    return np.maximum.accumulate(d)


def radial_distance(m: MetricState, x_coord: float) -> float:
    if not 0.0 <= x_coord <= math.pi:
        raise DomainError(f"coordinate {x_coord} outside [0, pi]")
    return float(_arclength_poly(m)(x_coord))


def diameter_along_axis(m: MetricState) -> float:
    return radial_distance(m, math.pi)


def ball_volume(m: MetricState, rho: float) -> float:
    """Volume of the geodesic ball of radius ``rho`` about the north pole."""
    if rho < 0:
        raise DomainError(f"ball radius must be nonnegative, got {rho}")
    if rho == 0:
        return 0.0
    arclen = _arclength_poly(m)
    vol = CubicSpline(m.grid.x, m.a * m.f**2).antiderivative()
    if rho >= arclen(math.pi):
        return FOUR_PI * float(vol(math.pi))
    roots = arclen.solve(rho, extrapolate=False)
    roots = roots[(roots >= 0) & (roots <= math.pi)]
    return FOUR_PI * float(vol(roots.min()))


# ---------------------------------------------------------------------------
# initial data families

def round_sphere(grid: Grid, r: float = 1.0, phi: Optional[np.ndarray] = None, t: float = 0.0) -> MetricState:
    x = grid.x
    f = r * np.sin(x)
    f[0] = f[-1] = 0.0
    ph = np.zeros_like(x) if phi is None else np.asarray(phi, dtype=float)
    return MetricState(t, grid, np.full_like(x, r), f, ph)


def perturbed_sphere(grid: Grid, eps: float = 0.1, phi_amp: float = 0.2, t: float = 0.0) -> MetricState:
    """``f = sin x (1 + eps sin^2 x)``, ``a = 1``, ``phi = phi_amp cos x``."""
    x = grid.x
    f = np.sin(x) * (1.0 + eps * np.sin(x) ** 2)
    f[0] = f[-1] = 0.0
    return MetricState(t, grid, np.ones_like(x), f, phi_amp * np.cos(x))


# ---------------------------------------------------------------------------
# CSV serialisation

def metric_to_csv(m: MetricState) -> str:
    lines = [f"# t={m.t:.17g} N={m.grid.N}", "x,a,f,phi"]
    for row in zip(m.grid.x, m.a, m.f, m.phi):
        lines.append(",".join(f"{v:.17g}" for v in row))
    return "\n".join(lines) + "\n"


def metric_from_csv(text: str) -> MetricState:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    head = lines[0].lstrip("#").split()
    meta = dict(item.split("=", 1) for item in head)
    t, N = float(meta["t"]), int(meta["N"])
    if lines[1].replace(" ", "") != "x,a,f,phi":
        raise DomainError(f"unexpected header {lines[1]!r}")
    data = np.array([[float(c) for c in ln.split(",")] for ln in lines[2:]])
    grid = Grid(N)
    if data.shape != (N + 1, 4):
        raise DomainError(f"expected {N + 1} rows, found {data.shape[0]}")
    if not np.array_equal(data[:, 0], grid.x):
        raise DomainError("node coordinates do not match a uniform grid on [0, pi]")
    return MetricState(t, grid, data[:, 1], data[:, 2], data[:, 3])
