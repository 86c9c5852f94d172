"""Independent reference computations used only by the tests."""

import math

import numpy as np


def _d(fun, p, i, eps):
    e = np.zeros(3)
    e[i] = eps
    return (8 * (fun(p + e) - fun(p - e)) - (fun(p + 2 * e) - fun(p - 2 * e))) / (12 * eps)


def christoffel(metric, p, eps=1e-3):
    """Gamma^k_ij of a 3-metric given as a callable point -> 3x3 array."""
    ginv = np.linalg.inv(metric(p))
    dg = np.array([_d(metric, p, i, eps) for i in range(3)])  # dg[l, i, j] = d_l g_ij
    gam = np.zeros((3, 3, 3))
    for k in range(3):
        for i in range(3):
            for j in range(3):
                gam[k, i, j] = 0.5 * sum(
                    ginv[k, l] * (dg[i, l, j] + dg[j, l, i] - dg[l, i, j]) for l in range(3)
                )
    return gam


def ricci_mixed(metric, p, eps=1e-3):
    """Mixed Ricci tensor R^i_j from Riemann built out of finite-differenced Christoffels."""
    gam = christoffel(metric, p, eps)
    dgam = np.array([_d(lambda q: christoffel(metric, q, eps), p, i, eps) for i in range(3)])
    # R^r_{s m n} = d_m G^r_{ns} - d_n G^r_{ms} + G^r_{ml} G^l_{ns} - G^r_{nl} G^l_{ms}
    riem = (
        np.einsum("mrns->rsmn", dgam)
        - np.einsum("nrms->rsmn", dgam)
        + np.einsum("rml,lns->rsmn", gam, gam)
        - np.einsum("rnl,lms->rsmn", gam, gam)
    )
    ric = np.einsum("rsrn->sn", riem)
    return np.linalg.inv(metric(p)) @ ric


def warped_metric(a, f):
    def metric(p):
        x, th, _ = p
        return np.diag([a(x) ** 2, f(x) ** 2, f(x) ** 2 * math.sin(th) ** 2])

    return metric


def cartesian_metric(a, f):
    """The same metric in a Cartesian chart centred at the pole x = 0.

    With r = |y|: g_ij = a(r)^2 n_i n_j + (f(r)/r)^2 (delta_ij - n_i n_j), smooth
    across the pole for even a and odd f.
    """

    def metric(y):
        r = float(np.linalg.norm(y))
        n = y / r
        P = np.outer(n, n)
        return a(r) ** 2 * P + (f(r) / r) ** 2 * (np.eye(3) - P)

    return metric


def ricci_eigenvalues(a, f, x, eps=1e-3):
    """(radial, spherical) Ricci eigenvalues of a^2 dx^2 + f^2 g_S2 at coordinate x."""
    if x > math.pi / 2:
        a0, f0 = a, f
        a, f, x = (lambda r: a0(math.pi - r)), (lambda r: f0(math.pi - r)), math.pi - x
    # keep the stencil off the origin itself
    y = np.array([x, 0.37 * eps, 0.0]) if x < 3 * eps else np.array([x, 0.0, 0.0])
    rm = ricci_mixed(cartesian_metric(a, f), y, eps)
    n = y / np.linalg.norm(y)
    t = np.array([-n[1], n[0], 0.0])
    return float(n @ rm @ n), float(t @ rm @ t)


def s3_kernel_images(d, tau, n_images=6):
    """Heat kernel of the unit 3-sphere by the method of images on the universal cover of the radial variable.

    Accurate for d well inside [0, pi); near the antipode the image terms cancel.
    """
    d = np.atleast_1d(np.asarray(d, dtype=float))
    out = np.zeros_like(d)
    for n in range(-n_images, n_images + 1):
        th = d + 2 * math.pi * n
        with np.errstate(invalid="ignore", divide="ignore"):
            ratio = np.where(np.abs(np.sin(d)) > 1e-12, th / np.sin(d), 1.0 if n == 0 else 0.0)
        out += ratio * np.exp(-th**2 / (4 * tau))
    # d == 0: only n = 0 contributes finitely; sum of +-n terms cancels in the limit
    small = np.abs(d) <= 1e-12
    if np.any(small):
        lim = 1.0 + sum(
            2 * (1 - (2 * math.pi * n) ** 2 / (2 * tau)) * math.exp(-(2 * math.pi * n) ** 2 / (4 * tau))
            for n in range(1, n_images + 1)
        )
        out[small] = lim
    return (4 * math.pi * tau) ** -1.5 * math.exp(tau) * out


def random_regular_profile(rng, n_modes=3, amp=0.08):
    """Random smooth (a, f, phi) callables satisfying pole regularity and parity."""
    ca = rng.normal(size=n_modes) * amp
    ce = rng.normal(size=n_modes) * amp
    cp = rng.normal(size=n_modes + 1) * 0.3

    def a(x):
        return 1.0 + sum(c * math.cos((k + 1) * x) for k, c in enumerate(ca))

    def f(x):
        p = sum(c * math.cos(k * x) for k, c in enumerate(ce))
        return math.sin(x) * a(x) * math.exp(math.sin(x) ** 2 * p)

    def phi(x):
        return sum(c * math.cos(k * x) for k, c in enumerate(cp))

    return a, f, phi
