"""Convective term, Brinkman-Forchheimer damping, the drift F, and evaluators
for the nonlinear-term estimates.

Array-level functions (suffix ``_array``) accept spectral coefficient arrays
with any number of leading batch axes and are what the solver uses; the
field-level functions wrap them for single :class:`VectorField` inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

import numpy as np

from . import kernels
from .spectral_field import (
    VectorField,
    _check_same_grid,
    aniso_norm,
    derivative_array,
    gradh_norm,
    l2_norm,
    leray_array,
    pad_spectrum,
    pairing_array,
    sq_norm_array,
    to_physical_array,
    to_spectral_array,
    truncate_spectrum,
)


@dataclass(frozen=True)
class DriftParams:
    """Physical parameters of the drift and switches for its three terms."""

    nu: float = 1.0
    a: float = 1.0
    alpha: float = 1.5
    viscous: bool = True
    convective: bool = True
    damping: bool = True

    def __post_init__(self):
        if self.nu <= 0:
            raise ValueError("nu must be positive")
        if self.a <= 0:
            raise ValueError("a must be positive")
        if self.alpha <= 1:
            raise ValueError("alpha must exceed 1")


@dataclass(frozen=True)
class InequalityParams:
    """Free constants appearing in the nonlinear estimates."""

    eta: float = 0.5
    c_eta: float = 1.0
    eps0: float = 0.5
    eps1: float = 0.5
    c_alpha: float = 1.0
    kappa: float = 0.125
    nu: float = field(default=1.0, repr=False)

    def __post_init__(self):
        for name in ("eta", "c_eta", "eps0", "eps1", "c_alpha", "kappa", "nu"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.eta >= self.nu:
            raise ValueError("eta must be smaller than nu")


# -- convective term ------------------------------------------------------------
def _gradient_physical(v, grid):
    """Physical samples of d_j v_i, shape (..., 3 [j], 3 [i], N1, N2, N3)."""
    d = np.stack([derivative_array(v, grid, j) for j in (1, 2, 3)], axis=-5)
    return to_physical_array(d, grid)


def convective_array(u, v, grid, project=True):
    """Spectral coefficients of P_div((u . grad) v), 2/3-dealiased."""
    mask = grid.dealias_mask
    u = u * mask
    v = v * mask
    up = to_physical_array(u, grid)
    dv = _gradient_physical(v, grid)
    prod = np.einsum("...jxyz,...jixyz->...ixyz", up, dv)
    out = to_spectral_array(prod, grid) * mask
    return leray_array(out, grid) if project else out


def convective(u, v):
    """B(u, v) = P_div((u . grad) v)."""
    grid = _check_same_grid(u, v)
    return VectorField(convective_array(u.coeffs, v.coeffs, grid), grid, True)


def trilinear(u, v, w):
    """<B(u, v), w> as an L^2 pairing."""
    grid = _check_same_grid(u, v, w)
    b = convective_array(u.coeffs, v.coeffs, grid, project=False)
    return float(pairing_array(b, w.coeffs * grid.dealias_mask, grid))


# -- damping ------------------------------------------------------------------
def damping_array(u, grid, alpha, factor=2, backend=None):
    """P_div(|u|^{2 alpha} u) from a ``factor``-times oversampled physical grid.

    Returns:
        (coefficients, power_integral) where ``power_integral`` is the
        fine-grid quadrature of |u|^{2 alpha + 2}, one value per batch entry.
    """
    fine = grid.oversampled(factor)
    batch = u.shape[:-4]
    up = to_physical_array(pad_spectrum(u, grid, fine), fine)
    flat = up.reshape((-1, 3, fine.npts))
    out, sums = kernels.damping_pointwise(flat, alpha, backend=backend)
    g = to_spectral_array(out.reshape(up.shape), fine)
    coeffs = leray_array(truncate_spectrum(g, fine, grid), grid)
    return coeffs, (sums * (fine.volume / fine.npts)).reshape(batch)


def damping(u, a, alpha):
    """a P_div(|u|^{2 alpha} u)."""
    if alpha <= 1:
        raise ValueError("alpha must exceed 1")
    c, _ = damping_array(u.coeffs, u.grid, alpha)
    return VectorField(a * c, u.grid, True)


def power_integral(u, p, factor=2):
    """Fine-grid quadrature of |u|^p (the L^p norm raised to p)."""
    fine = u.grid.oversampled(factor)
    up = to_physical_array(pad_spectrum(u.coeffs, u.grid, fine), fine)
    r = np.sqrt(np.einsum("c...,c...->...", up, up))
    return float(fine.volume / fine.npts * np.sum(r**p))


# -- drift ----------------------------------------------------------------------
def drift_array(u, grid, params, include_viscous=True):
    """Spectral coefficients of the enabled drift terms.

    Returns:
        (F, power_integral): ``power_integral`` is the fine-grid integral of
        |u|^{2 alpha + 2} (zero when damping is off).
    """
    out = np.zeros_like(u)
    pw = np.zeros(u.shape[:-4])
    if params.viscous and include_viscous:
        out -= params.nu * grid.kh_squared * u
    if params.convective:
        out -= convective_array(u, u, grid)
    if params.damping:
        d, pw = damping_array(u, grid, params.alpha)
        out -= params.a * d
    return out, pw


def drift(u, p):
    """F(u) = nu Delta_h u - B(u, u) - a P_div(|u|^{2 alpha} u) for the toggled terms."""
    f, _ = drift_array(u.coeffs, u.grid, p)
    return VectorField(f, u.grid, True)


# -- pointwise monotonicity ------------------------------------------------------------
def monotonicity_gap(y, z, alpha, kappa):
    """(|y|^{2a} y - |z|^{2a} z).(y - z) - kappa |y - z|^2 (|y| + |z|)^{2a}.

    Accepts single 3-vectors (returns a float) or arrays of shape (n, 3).
    """
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    gap = kernels.monotonicity_gap(y, z, alpha, kappa)
    return float(gap[0]) if y.ndim == 1 else gap


def kappa_star_scan(alpha, n_ratio=1000, n_angle=1000):
    """Brute-force minimum of the monotonicity ratio over a (|z|/|y|, angle) grid.

    By rotation and scaling invariance it suffices to take y = e1 and z in the
    (e1, e2) plane with |z| <= 1; the grid includes the antipodal line and the
    circle |z| = 1 (excluding z = y).

    Returns:
        (kappa_star, argmin) with argmin = (|z|, angle).
    """
    r = np.linspace(0.0, 1.0, n_ratio)
    th = np.linspace(0.0, np.pi, n_angle)
    R, T = np.meshgrid(r, th, indexing="ij")
    zx, zy = R * np.cos(T), R * np.sin(T)
    dx, dy = 1.0 - zx, -zy
    d2 = dx**2 + dy**2
    wz = R ** (2 * alpha)
    num = (1.0 - wz * zx) * dx + (-wz * zy) * dy
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = num / (d2 * (1.0 + R) ** (2 * alpha))
    ratio[d2 < 1e-24] = np.inf
    i = np.unravel_index(np.argmin(ratio), ratio.shape)
    return float(ratio[i]), (float(R[i]), float(T[i]))


@lru_cache(maxsize=None)
def fixtures():
    """Frozen constants measured once by the oracles in ``tools/`` and stored with the package."""
    text = resources.files("anspde").joinpath("data/fixtures.json").read_text(encoding="utf-8")
    return json.loads(text)


def kappa_star(alpha):
    """Stored brute-force value of the optimal monotonicity constant."""
    table = fixtures()["kappa_star"]
    key = f"{float(alpha):g}"
    if key not in table:
        return kappa_star_scan(alpha)[0]
    return float(table[key]["value"])


# -- inequality evaluators --------------------------------------------------------
def bound_ratio_B(phi, psi, v):
    """|<B(phi, psi), v>| / (||v||_{1,1} |grad_h phi|^{1/2} |grad_h psi|^{1/2} |phi|^{1/2} |psi|^{1/2}).

    Returns NaN for a degenerate (zero) denominator.
    """
    num = abs(trilinear(phi, psi, v))
    den = aniso_norm(v, (1, 1)) * np.sqrt(gradh_norm(phi) * gradh_norm(psi) * l2_norm(phi) * l2_norm(psi))
    return num / den if den > 0 else float("nan")


def gn_slice_ratio(f, factor=2):
    """Max over x3-slices of |phi|_{L^4_h} / (|grad_h phi|_{L^2_h}^{1/2} |phi|_{L^2_h}^{1/2}).

    Slices whose denominator vanishes are skipped.

    Raises:
        ValueError: if every slice is degenerate.
    """
    grid = f.grid
    fine = grid.oversampled(factor)
    c = pad_spectrum(f.coeffs, grid, fine)
    u = to_physical_array(c, fine)
    d = to_physical_array(np.stack([derivative_array(c, fine, 1), derivative_array(c, fine, 2)]), fine)
    dA = fine.box_lengths[0] * fine.box_lengths[1] / (fine.resolution[0] * fine.resolution[1])
    mag2 = np.einsum("cxyz,cxyz->xyz", u, u)
    l4 = (dA * np.sum(mag2**2, axis=(0, 1))) ** 0.25
    l2 = np.sqrt(dA * np.sum(mag2, axis=(0, 1)))
    gh = np.sqrt(dA * np.einsum("jcxyz,jcxyz->z", d, d))
    den = np.sqrt(gh * l2)
    scale = den.max() if den.size else 0.0
    live = den > 1e-12 * scale if scale > 0 else np.zeros_like(den, dtype=bool)
    if not live.any():
        raise ValueError("all slices are degenerate")
    return float(np.max(l4[live] / den[live]))


def d3B_pairing(u):
    """<d3 B(u, u), d3 u>."""
    grid = u.grid
    b = convective_array(u.coeffs, u.coeffs, grid, project=False)
    k3 = grid.derivative_multipliers[2]
    return float(pairing_array(b, u.coeffs * grid.dealias_mask, grid, k3**2))


def weighted_sq_integral(u, g_coeffs, p, factor=2, r_coeffs=None):
    """Fine-grid quadrature of r^p |g|^2 with r = |u| (or |u| + |r_field|)."""
    grid = u.grid
    fine = grid.oversampled(factor)
    up = to_physical_array(pad_spectrum(u.coeffs, grid, fine), fine)
    r = np.sqrt(np.einsum("c...,c...->...", up, up))
    if r_coeffs is not None:
        vp = to_physical_array(pad_spectrum(r_coeffs, grid, fine), fine)
        r = r + np.sqrt(np.einsum("c...,c...->...", vp, vp))
    g = to_physical_array(pad_spectrum(g_coeffs, grid, fine), fine)
    s = kernels.weighted_power_sum(r.reshape(1, -1), g.reshape(1, 3, -1), p)
    return float(s[0] * fine.volume / fine.npts)


def d3B_bound_rhs(u, p, alpha, C=1.0):
    """C [eps0 |grad_h d3 u|^2 + eps1/(4 eps0) | |u|^alpha d3 u |^2 + C_alpha eps0^-1 eps1^(-1/(alpha-1)) |d3 u|^2]."""
    grid = u.grid
    d3 = derivative_array(u.coeffs, grid, 3)
    t1 = sq_norm_array(d3, grid, grid.kh_squared)
    t2 = weighted_sq_integral(u, d3, alpha)
    t3 = sq_norm_array(d3, grid)
    coef = p.c_alpha / p.eps0 * p.eps1 ** (-1.0 / (alpha - 1.0))
    return float(C * (p.eps0 * t1 + p.eps1 / (4 * p.eps0) * t2 + coef * t3))


def young_triple_bound(f, g, h, alpha, eps0, eps1, c_alpha=1.0, cell=1.0):
    """Both sides of the Hoelder-Young estimate for scalar sample arrays f, g, h.

    Args:
        f, g, h: physical samples of equal shape.
        cell: quadrature weight of one sample (volume / number of points).

    Returns:
        (lhs, rhs) with lhs = |int f g h| and
        rhs = eps0 |h|^2 + eps1/(4 eps0) | |f|^alpha g |^2 + c_alpha eps0^-1 eps1^(-1/(alpha-1)) |g|^2.
    """
    f, g, h = (np.asarray(x, dtype=float) for x in (f, g, h))
    lhs = abs(cell * np.sum(f * g * h))
    rhs = cell * (
        eps0 * np.sum(h * h)
        + eps1 / (4 * eps0) * np.sum(np.abs(f) ** (2 * alpha) * g * g)
        + c_alpha / eps0 * eps1 ** (-1.0 / (alpha - 1.0)) * np.sum(g * g)
    )
    return float(lhs), float(rhs)


def F_diff_terms(u, v, p, q):
    """Ingredients of the uniqueness estimate for w = u - v.

    Returns a dict with ``lhs`` = <F(u) - F(v), w>, ``gradh_w`` = |grad_h w|^2,
    ``v11`` = ||v||_{1,1}^2, ``w2`` = |w|^2 and ``damp`` = |(|u| + |v|)^alpha w|^2.
    """
    grid = _check_same_grid(u, v)
    fu, _ = drift_array(u.coeffs, grid, p)
    fv, _ = drift_array(v.coeffs, grid, p)
    w = u.coeffs - v.coeffs
    return {
        "lhs": float(pairing_array(fu - fv, w, grid)),
        "gradh_w": float(sq_norm_array(w, grid, grid.kh_squared)),
        "v11": aniso_norm(v, (1, 1)) ** 2,
        "w2": float(sq_norm_array(w, grid)),
        "damp": weighted_sq_integral(u, w, 2 * p.alpha, r_coeffs=v.coeffs) if p.damping else 0.0,
    }


def F_diff_pairing(u, v, p, q):
    """(lhs, rhs) of <F(u) - F(v), u - v> <= -eta |grad_h w|^2 + C_eta ||v||_{1,1}^2 |w|^2 - a kappa |(|u|+|v|)^alpha w|^2."""
    t = F_diff_terms(u, v, p, q)
    rhs = -q.eta * t["gradh_w"] + q.c_eta * t["v11"] * t["w2"] - p.a * q.kappa * t["damp"]
    return t["lhs"], float(rhs)


def required_c_eta(u, v, p, q):
    """Smallest C_eta making the uniqueness estimate hold for this pair (NaN if degenerate).

    Not clipped at zero: a negative value means the viscous and damping
    terms alone already close the estimate.
    """
    t = F_diff_terms(u, v, p, q)
    den = t["v11"] * t["w2"]
    if den <= 0:
        return float("nan")
    return (t["lhs"] + q.eta * t["gradh_w"] + p.a * q.kappa * t["damp"]) / den
