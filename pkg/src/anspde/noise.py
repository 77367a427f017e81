"""Q-Wiener noise, the diffusion coefficient sigma and its condition constants.

The noise is ``W = sum_k sqrt(q_k) beta_k psi_k`` where ``psi_k`` are real
divergence-free Fourier fields normalised in the H^{0,1} norm.  The
functions ``e_k = sqrt(q_k) psi_k`` form an orthonormal basis of the
coefficient space H_0, so the increment of W over dt is described by the
vector of independent N(0, dt) increments of the ``beta_k``.

The diffusion coefficient acts on that basis:
``sigma(t, u) e_k = sigma_k(t, x, u(x), grad_h u(x))`` and
``sigma(t, u) dW = sum_k dbeta_k sigma_k(t, x, u, grad_h u)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .spectral_field import (
    Grid,
    VectorField,
    aniso_norm,
    derivative_array,
    leray_array,
    pad_spectrum,
    sq_norm_array,
    to_physical_array,
    to_spectral_array,
    truncate_spectrum,
)


class ConditionViolation(AssertionError):
    """Raised when an audited growth, Lipschitz or Hoelder bound fails."""


# -- noise basis --------------------------------------------------------------
def _polarizations(k):
    kh = k / np.linalg.norm(k)
    if abs(kh[0]) < 1e-14 and abs(kh[1]) < 1e-14:
        return np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])
    ea = np.cross(kh, [0.0, 0.0, 1.0])
    ea /= np.linalg.norm(ea)
    eb = np.cross(kh, ea)
    return ea, eb / np.linalg.norm(eb)


def _representatives(grid):
    """Mode representatives (first nonzero component positive) in the dealias box,
    ordered by |m|^2 then lexicographically."""
    lim = grid.dealias_limits
    r = [np.arange(-l, l + 1) for l in lim]
    m = np.stack(np.meshgrid(*r, indexing="ij"), axis=-1).reshape(-1, 3)
    first = np.where(m[:, 0] != 0, m[:, 0], np.where(m[:, 1] != 0, m[:, 1], m[:, 2]))
    m = m[first > 0]
    sq = np.sum(m**2, axis=1)
    order = np.lexsort((m[:, 2], m[:, 1], m[:, 0], sq))
    return m[order]


@dataclass(frozen=True, eq=False)
class NoiseBasis:
    """First ``n_modes`` real divergence-free Fourier fields with eigenvalues q_k = q0 k^-r.

    Each wavevector representative contributes four fields: cosine and sine
    for each of two polarisations orthogonal to k.
    """

    grid: Grid
    n_modes: int = 8
    q0: float = 1.0
    r: float = 2.0
    modes: np.ndarray = field(init=False, repr=False)
    polarizations: np.ndarray = field(init=False, repr=False)
    phases: np.ndarray = field(init=False, repr=False)
    eigenvalues: np.ndarray = field(init=False, repr=False)
    _positions: np.ndarray = field(init=False, repr=False)
    _values: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.n_modes < 1:
            raise ValueError("n_modes must be positive")
        if self.q0 <= 0 or self.r <= 1:
            raise ValueError("need q0 > 0 and r > 1 for a trace-class covariance")
        reps = _representatives(self.grid)
        n_rep = -(-self.n_modes // 4)
        if n_rep > len(reps):
            raise ValueError(f"grid supports at most {4 * len(reps)} noise modes")
        g = self.grid
        N1, N2, _ = g.resolution
        sh = g.spectral_shape
        modes, pols, phases = [], [], []
        positions, values = [], []
        for m in reps[:n_rep]:
            k = np.array([2 * np.pi * m[i] / g.box_lengths[i] for i in range(3)])
            ea, eb = _polarizations(k)
            c = math.sqrt(2.0 / ((1.0 + k[2] ** 2) * g.volume))
            for e in (ea, eb):
                for phase in (0, 1):
                    modes.append(m)
                    pols.append(e)
                    phases.append(phase)
                    amp = c * e * (0.5 if phase == 0 else -0.5j)
                    pos, val = [], []
                    if m[2] >= 0:
                        pos.append(np.ravel_multi_index((m[0] % N1, m[1] % N2, m[2]), sh))
                        val.append(amp)
                    if m[2] <= 0:
                        pos.append(np.ravel_multi_index((-m[0] % N1, -m[1] % N2, -m[2]), sh))
                        val.append(np.conj(amp))
                    positions.append(pos)
                    values.append(val)
        n = self.n_modes
        uniq = np.unique(np.concatenate([np.asarray(p) for p in positions[:n]]))
        A = np.zeros((n, 3, uniq.size), dtype=complex)
        for j in range(n):
            for p, v in zip(positions[j], values[j]):
                A[j, :, np.searchsorted(uniq, p)] += v
        set_ = lambda name, val: object.__setattr__(self, name, val)  # noqa: E731
        set_("modes", np.array(modes[:n]))
        set_("polarizations", np.array(pols[:n]))
        set_("phases", np.array(phases[:n]))
        set_("eigenvalues", self.q0 * np.arange(1, n + 1, dtype=float) ** (-self.r))
        set_("_positions", uniq)
        set_("_values", A)

    def combine(self, coeffs):
        """Spectral coefficients of sum_k coeffs[..., k] psi_k (leading axes preserved)."""
        coeffs = np.asarray(coeffs)
        if coeffs.shape[-1] != self.n_modes:
            raise ValueError(f"expected {self.n_modes} mode coefficients, got {coeffs.shape[-1]}")
        lead = coeffs.shape[:-1]
        out = np.zeros(lead + (3, int(np.prod(self.grid.spectral_shape))), dtype=complex)
        out[..., self._positions] = np.einsum("...k,kcp->...cp", coeffs, self._values)
        return out.reshape(lead + (3,) + self.grid.spectral_shape)

    def mode(self, k):
        """The field psi_k (zero-based index)."""
        e = np.zeros(self.n_modes)
        e[k] = 1.0
        return VectorField(self.combine(e), self.grid, True)

    def wiener_field(self, beta):
        """Spectral coefficients of sum_k sqrt(q_k) beta_k psi_k."""
        return self.combine(np.asarray(beta) * np.sqrt(self.eigenvalues))

    def project(self, f):
        """Coordinates (f, psi_k)_{0,1} of a field on the basis."""
        from .spectral_field import pairing_array

        psi = self.combine(np.eye(self.n_modes))
        w = 1.0 + self.grid.k3_squared
        return pairing_array(psi, f.coeffs[None], self.grid, w)


def sample_increment(basis, dt, rng, size=None):
    """Independent N(0, dt) increments of the scalar Wiener processes beta_k.

    The corresponding field increment is ``basis.wiener_field(increment)``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    shape = (basis.n_modes,) if size is None else (size, basis.n_modes)
    return math.sqrt(dt) * rng.standard_normal(shape)


# -- scalar parameter fields ------------------------------------------------------
def scalar_field(grid, spec):
    """Spectral coefficients (shape of the spectral grid) of a scalar field.

    ``spec`` is a float (constant), or a dict with ``type`` in
    {``constant``, ``single_mode``, ``file``}:

    * ``{"type": "constant", "value": c}``
    * ``{"type": "single_mode", "value": c, "mode": [m1, m2, m3],
      "phase": "cos" | "sin", "offset": c0}`` gives c0 + c cos(k.x) (or sin)
    * ``{"type": "file", "path": p}`` loads physical samples from a ``.npy`` file.
    """
    out = np.zeros(grid.spectral_shape, dtype=complex)
    if spec is None:
        return out
    if isinstance(spec, (int, float)):
        spec = {"type": "constant", "value": float(spec)}
    kind = spec.get("type", "constant")
    if kind == "constant":
        out[0, 0, 0] = float(spec["value"])
    elif kind == "single_mode":
        m = [int(x) for x in spec["mode"]]
        if m[2] < 0:
            m = [-x for x in m]
        sign = -1.0 if spec.get("phase", "cos") == "sin" and m != [int(x) for x in spec["mode"]] else 1.0
        N1, N2, _ = grid.resolution
        c = float(spec["value"])
        amp = 0.5 * c if spec.get("phase", "cos") == "cos" else -0.5j * c * sign
        out[m[0] % N1, m[1] % N2, m[2]] += amp
        if m[2] == 0:
            out[-m[0] % N1, -m[1] % N2, 0] += np.conj(amp)
        out[0, 0, 0] += float(spec.get("offset", 0.0))
    elif kind == "file":
        samples = np.load(spec["path"])
        if samples.shape != grid.physical_shape:
            raise ValueError("scalar field file does not match the grid")
        out = to_spectral_array(samples, grid)
    else:
        raise ValueError(f"unknown scalar field type {kind!r}")
    return out


def mode_weights(n_modes, r, scheme="q"):
    """Per-mode scale for parameter families: sqrt(q_k / q_1) = k^(-r/2) or uniform."""
    if scheme == "q":
        return np.arange(1, n_modes + 1, dtype=float) ** (-r / 2)
    if scheme == "uniform":
        return np.ones(n_modes)
    raise ValueError(f"unknown weight scheme {scheme!r}")


# -- diffusion coefficient ------------------------------------------------------------
@dataclass(frozen=True)
class TimeProfile:
    """Scalar time factor g(t) = 1 + amplitude sin(frequency t)."""

    amplitude: float = 0.0
    frequency: float = 0.0

    def __call__(self, t):
        return 1.0 + self.amplitude * math.sin(self.frequency * t)

    @property
    def sup_sq(self):
        return (1.0 + abs(self.amplitude)) ** 2

    @property
    def lipschitz(self):
        return abs(self.amplitude * self.frequency)


@dataclass(frozen=True, eq=False)
class DiffusionCoefficient:
    """sigma_k(t, x, y, z) for the two coefficient families.

    ``example1``: g(t) [sigma_k0(x) + sigma_k1(x) y + sigma_k2(x) zeta + tsigma_k2(x) tzeta]
    with z = (zeta, tzeta) = (d1 u, d2 u); ``sigma0`` holds vector fields of
    shape (n, 3, spectral), the scalar families have shape (n, spectral).

    ``example2_lipschitz``: g(t) pointwise(x, y, z) where ``pointwise``
    maps physical samples x (3 arrays), y (3, ...), z (6, ...) to (n, 3, ...);
    the Lipschitz and growth bounds are supplied in ``bounds``.
    """

    basis: NoiseBasis
    family: str = "example1"
    sigma0: np.ndarray | None = None
    sigma1: np.ndarray | None = None
    sigma2: np.ndarray | None = None
    sigma2t: np.ndarray | None = None
    time: TimeProfile = TimeProfile()
    pointwise: Callable | None = None
    bounds: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in ("example1", "example2_lipschitz"):
            raise ValueError(f"unknown family {self.family!r}")
        if self.family == "example2_lipschitz" and self.pointwise is None:
            raise ValueError("example2_lipschitz needs a pointwise map")
        n = self.basis.n_modes
        spec = self.basis.grid.spectral_shape
        for name, shape in (("sigma0", (n, 3) + spec), ("sigma1", (n,) + spec), ("sigma2", (n,) + spec), ("sigma2t", (n,) + spec)):
            val = getattr(self, name)
            if val is None:
                continue
            val = np.asarray(val, dtype=complex)
            if val.shape != shape:
                raise ValueError(f"{name} has shape {val.shape}, expected {shape}")
            if not np.any(val):
                val = None
            object.__setattr__(self, name, val)

    @property
    def grid(self):
        return self.basis.grid

    @property
    def n_modes(self):
        return self.basis.n_modes

    @property
    def gradient_terms_enabled(self):
        if self.family == "example2_lipschitz":
            return self.bounds.get("C2", 0.0) > 0 or self.bounds.get("Ct2", 0.0) > 0 or self.bounds.get("Ct4", 0.0) > 0
        return self.sigma2 is not None or self.sigma2t is not None

    @property
    def is_additive(self):
        return self.family == "example1" and self.sigma1 is None and not self.gradient_terms_enabled

    @property
    def is_zero(self):
        return self.is_additive and self.sigma0 is None

    # -- constructors ---------------------------------------------------------------
    @classmethod
    def additive(cls, basis, amplitude=1.0, time=TimeProfile()):
        """sigma_k0 = amplitude sqrt(q_k) psi_k, so sigma dW = amplitude dW."""
        s0 = amplitude * np.sqrt(basis.eigenvalues)[:, None, None, None, None] * basis.combine(np.eye(basis.n_modes))
        return cls(basis, "example1", sigma0=s0, time=time)

    @classmethod
    def zero(cls, basis):
        return cls(basis, "example1")

    @classmethod
    def example1(cls, basis, sigma0_amplitude=0.0, sigma1=None, sigma2=None, sigma2t=None, weights="q", time=TimeProfile()):
        """Example-1 coefficient from scalar field specs scaled per mode.

        Each of ``sigma1``, ``sigma2``, ``sigma2t`` is a spec accepted by
        :func:`scalar_field` (or None); mode k uses it times ``mode_weights``.
        """
        w = mode_weights(basis.n_modes, basis.r, weights)
        s0 = None
        if sigma0_amplitude:
            s0 = cls.additive(basis, sigma0_amplitude).sigma0

        def fam(spec):
            if spec is None:
                return None
            f = scalar_field(basis.grid, spec)
            return w[:, None, None, None] * f[None]

        return cls(basis, "example1", s0, fam(sigma1), fam(sigma2), fam(sigma2t), time)

    @classmethod
    def example2(cls, basis, pointwise, bounds, time=TimeProfile()):
        """General Lipschitz family; ``bounds`` holds S0, C1, C2, Ct0, Ct1, Ct2, Ct3, Ct4 sums."""
        return cls(basis, "example2_lipschitz", pointwise=pointwise, bounds=dict(bounds), time=time)


# -- applying sigma ------------------------------------------------------------------
def _fine_physical(c, grid):
    fine = grid.oversampled(2)
    return to_physical_array(pad_spectrum(c, grid, fine), fine), fine


def apply_sigma_array(t, u, xi, coef, project=True):
    """Spectral coefficients of sigma(t, u) xi for batched u (..., 3, spec) and xi (..., n).

    Products are formed on a twice-oversampled grid, which is exact for the
    band-limited inputs used here, and the result is Leray-projected.
    """
    grid = coef.grid
    xi = np.asarray(xi, dtype=float)
    if xi.shape[-1] != coef.n_modes:
        raise ValueError(f"expected {coef.n_modes} noise coefficients, got {xi.shape[-1]}")
    lead = np.broadcast_shapes(u.shape[:-4], xi.shape[:-1])
    gt = coef.time(t)
    out = np.zeros(lead + (3,) + grid.spectral_shape, dtype=complex)
    if coef.family == "example1":
        if coef.sigma0 is not None:
            out = out + np.einsum("...k,kcijl->...cijl", xi, coef.sigma0)
        fams = [(coef.sigma1, None), (coef.sigma2, 1), (coef.sigma2t, 2)]
        if any(s is not None for s, _ in fams):
            fine = grid.oversampled(2)
            prod = 0.0
            for s, axis in fams:
                if s is None:
                    continue
                agg = np.einsum("...k,kijl->...ijl", xi, s)
                sp = to_physical_array(pad_spectrum(agg, grid, fine), fine)
                src = u if axis is None else derivative_array(u, grid, axis)
                fp = to_physical_array(pad_spectrum(src, grid, fine), fine)
                prod = prod + sp[..., None, :, :, :] * fp
            out = out + truncate_spectrum(to_spectral_array(prod, fine), fine, grid)
    else:
        up, fine = _fine_physical(u, grid)
        zp = to_physical_array(
            pad_spectrum(np.concatenate([derivative_array(u, grid, 1), derivative_array(u, grid, 2)], axis=-4), grid, fine),
            fine,
        )
        x = fine.coordinates()
        vals = coef.pointwise(x, up, zp)  # (..., n, 3, fine)
        agg = np.einsum("...k,...kcijl->...cijl", xi, vals)
        out = out + truncate_spectrum(to_spectral_array(agg, fine), fine, grid)
    out = gt * out
    return leray_array(out, grid) if project else out


def apply_sigma(t, u, xi, coef):
    """sigma(t, u) xi as a divergence-free field."""
    if u.grid != coef.grid:
        raise ValueError("field and coefficient grids differ")
    return VectorField(apply_sigma_array(t, u.coeffs, xi, coef), u.grid, True)


def sigma_modes(t, u, coef, project=True):
    """Stack of sigma(t, u) e_k for all k, shape (n, 3, spec)."""
    return apply_sigma_array(t, u.coeffs[None], np.eye(coef.n_modes), coef, project)


def hs_norm(coef, t, u, space="L", project=True):
    """|sigma(t, u)|^2 in the Hilbert-Schmidt norm of L (space='L') or L-tilde ('Ltilde')."""
    s = sigma_modes(t, u, coef, project)
    g = coef.grid
    if space == "L":
        return float(np.sum(sq_norm_array(s, g)))
    if space == "Ltilde":
        return float(np.sum(sq_norm_array(s, g, 1.0 + g.k3_squared)))
    raise ValueError("space must be 'L' or 'Ltilde'")


# -- condition constants -------------------------------------------------------------
@dataclass(frozen=True)
class ConditionConstants:
    K0: float = 0.0
    K1: float = 0.0
    K2: float = 0.0
    Kt0: float = 0.0
    Kt1: float = 0.0
    Kt2: float = 0.0
    L1: float = 0.0
    L2: float = 0.0
    gamma: float = 1.0
    holder_C: float = 0.0

    def __post_init__(self):
        for name in ("K0", "K1", "K2", "Kt0", "Kt1", "Kt2", "L1", "L2", "holder_C"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")

    @property
    def primed_regime(self):
        return self.K2 == 0 and self.Kt2 == 0 and self.L2 == 0

    def as_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _sup_sq(scalars, grid):
    """Per-mode squared sup norms of scalar fields and of their d3 derivatives."""
    if scalars is None:
        return np.zeros(1), np.zeros(1)
    p, _ = _fine_physical(scalars, grid)
    d3 = 1j * grid.derivative_multipliers[2] * scalars
    q, _ = _fine_physical(d3, grid)
    return np.max(p**2, axis=(-3, -2, -1)), np.max(q**2, axis=(-3, -2, -1))


def constants_from_example1(coef):
    """Closed-form growth, Lipschitz and Hoelder constants of an Example-1 coefficient.

    Raises:
        ValueError: for another family or non-finite parameter sums.
    """
    if coef.family != "example1":
        raise ValueError("constants_from_example1 needs an example1 coefficient")
    g = coef.grid
    tsq = coef.time.sup_sq
    if coef.sigma0 is not None:
        s0_l2 = float(np.sum(sq_norm_array(coef.sigma0, g)))
        s0_01 = float(np.sum(sq_norm_array(coef.sigma0, g, 1.0 + g.k3_squared)))
    else:
        s0_l2 = s0_01 = 0.0
    s1, d31 = _sup_sq(coef.sigma1, g)
    s2, d32 = _sup_sq(coef.sigma2, g)
    s2t, d32t = _sup_sq(coef.sigma2t, g)
    sums = [s0_l2, s0_01, s1.sum(), d31.sum(), s2.sum() + s2t.sum(), d32.sum() + d32t.sum()]
    if not all(np.isfinite(sums)):
        raise ValueError("parameter families are not summable")
    base = {
        "K0": 3 * s0_l2,
        "K1": 3 * float(s1.sum()),
        "K2": 3 * float(s2.sum() + s2t.sum()),
    }
    Kt0 = 5 * s0_01
    Kt1 = base["K1"] + 5 * float(s1.sum() + d31.sum())
    Kt2 = base["K2"] + 5 * float(s2.sum() + s2t.sum() + d32.sum() + d32t.sum())
    holder = coef.time.lipschitz * (math.sqrt(base["K0"]) + math.sqrt(max(base["K1"], base["K2"])))
    return ConditionConstants(
        K0=tsq * base["K0"],
        K1=tsq * base["K1"],
        K2=tsq * base["K2"],
        Kt0=tsq * Kt0,
        Kt1=tsq * Kt1,
        Kt2=tsq * Kt2,
        L1=tsq * 2.0 / 3.0 * base["K1"],
        L2=tsq * 2.0 / 3.0 * base["K2"],
        gamma=1.0,
        holder_C=holder,
    )


def constants_from_example2(coef):
    """Constants of the general Lipschitz family from its user-supplied bound sums.

    ``coef.bounds`` keys: S0 = sum |sigma_k(t,.,0,0)|^2_{L^2}, C1, C2 = sums of
    squared sup norms of C_{k,1}, C_{k,2}; Ct0 = sum |tC_{k,0}|^2_{L^2};
    Ct1, Ct2 = sums of squared sup norms of tC_{k,1}, tC_{k,2}; Ct3, Ct4.
    """
    if coef.family != "example2_lipschitz":
        raise ValueError("constants_from_example2 needs an example2_lipschitz coefficient")
    b = {k: float(coef.bounds.get(k, 0.0)) for k in ("S0", "C1", "C2", "Ct0", "Ct1", "Ct2", "Ct3", "Ct4")}
    tsq = coef.time.sup_sq
    K0, K1, K2 = 3 * b["S0"], 3 * b["C1"], 3 * b["C2"]
    holder = coef.time.lipschitz * (math.sqrt(K0) + math.sqrt(max(K1, K2)))
    return ConditionConstants(
        K0=tsq * K0,
        K1=tsq * K1,
        K2=tsq * K2,
        Kt0=tsq * (K0 + 5 * b["Ct0"]),
        Kt1=tsq * (K1 + 5 * b["Ct3"] + 3 * b["C1"] + 5 * b["Ct1"]),
        Kt2=tsq * (K2 + 5 * b["Ct4"] + 3 * b["C2"] + 5 * b["Ct2"]),
        L1=tsq * 2.0 / 3.0 * K1,
        L2=tsq * 2.0 / 3.0 * K2,
        gamma=1.0,
        holder_C=holder,
    )


def condition_constants(coef):
    if coef.family == "example1":
        return constants_from_example1(coef)
    return constants_from_example2(coef)


# -- audits -----------------------------------------------------------------------
@dataclass
class AuditReport:
    """Worst relative margins (rhs - lhs) / max(rhs, tiny) per audited inequality."""

    margins: dict = field(default_factory=dict)
    witnesses: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)
    n_samples: int = 0

    @property
    def passed(self):
        return not self.violations

    def _record(self, name, index, lhs, rhs, rtol=1e-10):
        margin = (rhs - lhs) / max(abs(rhs), 1e-300)
        if name not in self.margins or margin < self.margins[name]:
            self.margins[name] = margin
            self.witnesses[name] = index
        if lhs > rhs * (1 + rtol) + 1e-300 and (name, index) not in self.violations:
            self.violations.append((name, index))


def audit_condition(coef, constants, samples, nu=None, raise_on_violation=False):
    """Check the growth, Lipschitz, threshold and Hoelder bounds on an ensemble.

    Args:
        coef: diffusion coefficient.
        constants: ConditionConstants to test.
        samples: iterable of (t, u, v) with u, v divergence-free fields.
        nu: viscosity; when given, the threshold Kt2 < 2 nu / 21 is checked.
        raise_on_violation: raise ConditionViolation on the first failure.

    Returns:
        AuditReport with the worst margins and witness sample indices.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("empty ensemble")
    rep = AuditReport(n_samples=len(samples))
    c = constants
    g = coef.grid
    for i, (t, u, v) in enumerate(samples):
        su = sigma_modes(t, u, coef)
        sv = sigma_modes(t, v, coef)
        s0 = sigma_modes(0.0, u, coef)
        nl = float(np.sum(sq_norm_array(su, g)))
        nlt = float(np.sum(sq_norm_array(su, g, 1.0 + g.k3_squared)))
        u2 = float(sq_norm_array(u.coeffs, g))
        gh = float(sq_norm_array(u.coeffs, g, g.kh_squared))
        ghd3 = float(sq_norm_array(u.coeffs, g, g.kh_squared * g.k3_squared))
        rep._record("growth_L", i, nl, c.K0 + c.K1 * u2 + c.K2 * gh)
        rep._record("growth_Ltilde", i, nlt, c.Kt0 + c.Kt1 * aniso_norm(u, (0, 1)) ** 2 + c.Kt2 * (gh + ghd3))
        w = u.coeffs - v.coeffs
        lip = float(np.sum(sq_norm_array(su - sv, g)))
        rep._record("lipschitz", i, lip, c.L1 * sq_norm_array(w, g) + c.L2 * sq_norm_array(w, g, g.kh_squared))
        dt = abs(t)
        hol = math.sqrt(float(np.sum(sq_norm_array(su - s0, g))))
        rep._record("holder", i, hol, c.holder_C * (1 + aniso_norm(u, (1, 0))) * dt**c.gamma)
    if nu is not None:
        limit = 2 * nu / 21
        rep.margins["threshold_Kt2"] = (limit - c.Kt2) / limit
        rep.witnesses["threshold_Kt2"] = -1
        if c.Kt2 >= limit:
            rep.violations.append(("threshold_Kt2", -1))
    if raise_on_violation and rep.violations:
        name, idx = rep.violations[0]
        raise ConditionViolation(f"{name} violated at sample {idx}")
    return rep
