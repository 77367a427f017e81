"""Periodic-box spectral representation of 3D vector fields.

Conventions used throughout the package:

* Coefficients are ``u_hat(k) = (1/Vol) * integral u(x) exp(-i k.x) dx``,
  computed as ``rfftn(u) / npts``.  Parseval reads
  ``integral |u|^2 dx = Vol * sum_k |u_hat(k)|^2``.
* Spectral arrays use the real-FFT half layout: shape
  ``(..., 3, N1, N2, N3 // 2 + 1)``; the omitted half follows from
  conjugate symmetry.  Any number of leading batch axes is allowed.
* Mode indices satisfy ``-N/2 < m <= N/2``; wavenumbers are ``2 pi m / L``.
  Odd derivatives use a zero multiplier on Nyquist indices so that real
  fields stay real.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np
import scipy.fft as sfft

AXES = (-3, -2, -1)
SNAPSHOT_MAGIC = b"ANSF"
SNAPSHOT_VERSION = 1


class GridMismatchError(ValueError):
    """Raised when fields defined on different grids are combined."""


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on the box [0, L1) x [0, L2) x [0, L3)."""

    box_lengths: tuple = (2 * np.pi, 2 * np.pi, 2 * np.pi)
    resolution: tuple = (16, 16, 16)
    dealias_fraction: float = 2.0 / 3.0

    def __post_init__(self):
        L = tuple(float(x) for x in self.box_lengths)
        N = tuple(int(n) for n in self.resolution)
        if len(L) != 3 or len(N) != 3:
            raise ValueError("box_lengths and resolution need three entries")
        if any(x <= 0 for x in L):
            raise ValueError("box lengths must be positive")
        if any(n <= 0 or n % 2 for n in N):
            raise ValueError("resolution must be even and positive")
        if not 0.0 < self.dealias_fraction <= 1.0:
            raise ValueError("dealias_fraction must lie in (0, 1]")
        object.__setattr__(self, "box_lengths", L)
        object.__setattr__(self, "resolution", N)
        object.__setattr__(self, "dealias_fraction", float(self.dealias_fraction))

    @classmethod
    def cube(cls, n, length=2 * np.pi, dealias_fraction=2.0 / 3.0):
        return cls((length,) * 3, (n,) * 3, dealias_fraction)

    # -- geometry ---------------------------------------------------------
    @property
    def volume(self):
        return float(np.prod(self.box_lengths))

    @property
    def npts(self):
        return int(np.prod(self.resolution))

    @property
    def physical_shape(self):
        return self.resolution

    @property
    def spectral_shape(self):
        N1, N2, N3 = self.resolution
        return (N1, N2, N3 // 2 + 1)

    def oversampled(self, factor=2):
        """Grid on the same box with ``factor`` times as many points per axis."""
        return Grid(self.box_lengths, tuple(factor * n for n in self.resolution), self.dealias_fraction)

    def coordinates(self):
        """Physical coordinates x1, x2, x3 broadcastable to the physical shape."""
        out = []
        for i, (L, n) in enumerate(zip(self.box_lengths, self.resolution)):
            shape = [1, 1, 1]
            shape[i] = n
            out.append((np.arange(n) * (L / n)).reshape(shape))
        return tuple(out)

    # -- mode indices -----------------------------------------------------
    @cached_property
    def mode_indices(self):
        """Integer mode indices (m1, m2, m3) broadcastable to the spectral shape."""
        N1, N2, N3 = self.resolution
        m1 = np.fft.fftfreq(N1, 1.0 / N1)
        m2 = np.fft.fftfreq(N2, 1.0 / N2)
        m1[N1 // 2] = N1 // 2
        m2[N2 // 2] = N2 // 2
        m3 = np.arange(N3 // 2 + 1, dtype=float)
        return (m1.reshape(-1, 1, 1), m2.reshape(1, -1, 1), m3.reshape(1, 1, -1))

    @cached_property
    def wavenumbers(self):
        return tuple(2 * np.pi * m / L for m, L in zip(self.mode_indices, self.box_lengths))

    @cached_property
    def derivative_multipliers(self):
        """Wavenumbers with Nyquist entries zeroed (used for odd derivatives)."""
        out = []
        for k, m, n in zip(self.wavenumbers, self.mode_indices, self.resolution):
            kk = k.copy()
            kk[m == n // 2] = 0.0
            out.append(kk)
        return tuple(out)

    @cached_property
    def kh_squared(self):
        k1, k2, _ = self.wavenumbers
        return np.broadcast_to(k1**2 + k2**2, self.spectral_shape).copy()

    @cached_property
    def k3_squared(self):
        return np.broadcast_to(self.wavenumbers[2] ** 2, self.spectral_shape).copy()

    @cached_property
    def k_squared(self):
        return self.kh_squared + self.k3_squared

    @cached_property
    def index_squared(self):
        """|m|^2 of the integer mode index."""
        m1, m2, m3 = self.mode_indices
        return np.broadcast_to(m1**2 + m2**2 + m3**2, self.spectral_shape).copy()

    @cached_property
    def multiplicity(self):
        """Number of full-spectrum modes each half-layout entry stands for (1 or 2)."""
        N3 = self.resolution[2]
        w = np.full(self.spectral_shape, 2.0)
        w[..., 0] = 1.0
        w[..., N3 // 2] = 1.0
        return w

    @cached_property
    def dealias_mask(self):
        """True where every |m_i| <= dealias_fraction * N_i / 2."""
        mask = np.ones(self.spectral_shape, dtype=bool)
        for m, n in zip(self.mode_indices, self.resolution):
            mask &= np.abs(m) <= self.dealias_fraction * n / 2
        return mask

    @cached_property
    def dealias_limits(self):
        return tuple(int(np.floor(self.dealias_fraction * n / 2 + 1e-12)) for n in self.resolution)

    def shell_mask(self, cutoff):
        """Galerkin mask: |m|^2 <= cutoff intersected with the dealias mask."""
        if cutoff is None:
            return self.dealias_mask.copy()
        return self.dealias_mask & (self.index_squared <= cutoff)


def _check_same_grid(*fields):
    g = fields[0].grid
    for f in fields[1:]:
        if f.grid != g:
            raise GridMismatchError("fields live on different grids")
    return g


# -- array-level transforms --------------------------------------------------
def to_physical_array(coeffs, grid):
    """Physical samples of spectral coefficients (leading axes preserved)."""
    return sfft.irfftn(coeffs, s=grid.resolution, axes=AXES, norm="forward")


def to_spectral_array(samples, grid):
    return sfft.rfftn(samples, axes=AXES, norm="forward")


@lru_cache(maxsize=None)
def _pad_indices(coarse, fine):
    idx = []
    for nc, nf in zip(coarse.resolution[:2], fine.resolution[:2]):
        src = np.r_[0 : nc // 2, nc // 2 + 1 : nc]
        dst = np.where(src < nc // 2, src, src - nc + nf)
        idx.append((src, dst))
    n3 = coarse.resolution[2] // 2
    idx.append((np.arange(n3), np.arange(n3)))
    return tuple(idx)


def pad_spectrum(coeffs, grid, fine):
    """Embed coarse coefficients into the spectrum of a finer grid (Nyquist dropped)."""
    (s1, d1), (s2, d2), (s3, d3) = _pad_indices(grid, fine)
    out = np.zeros(coeffs.shape[:-3] + fine.spectral_shape, dtype=complex)
    out[..., d1[:, None, None], d2[None, :, None], d3[None, None, :]] = coeffs[
        ..., s1[:, None, None], s2[None, :, None], s3[None, None, :]
    ]
    return out


def truncate_spectrum(coeffs, fine, grid):
    """Inverse of :func:`pad_spectrum`: keep the coarse-grid modes only."""
    (s1, d1), (s2, d2), (s3, d3) = _pad_indices(grid, fine)
    out = np.zeros(coeffs.shape[:-3] + grid.spectral_shape, dtype=complex)
    out[..., s1[:, None, None], s2[None, :, None], s3[None, None, :]] = coeffs[
        ..., d1[:, None, None], d2[None, :, None], d3[None, None, :]
    ]
    return out


def to_physical_fine(coeffs, grid, factor=2):
    fine = grid.oversampled(factor)
    return to_physical_array(pad_spectrum(coeffs, grid, fine), fine), fine


def leray_array(coeffs, grid):
    """Apply I - k k^T / |k|^2 mode-wise; the k = 0 mode is left untouched."""
    k1, k2, k3 = grid.wavenumbers
    ksq = grid.k_squared
    inv = np.divide(1.0, ksq, out=np.zeros_like(ksq), where=ksq > 0)
    kdotu = k1 * coeffs[..., 0, :, :, :] + k2 * coeffs[..., 1, :, :, :] + k3 * coeffs[..., 2, :, :, :]
    kdotu = kdotu * inv
    out = np.empty_like(coeffs)
    out[..., 0, :, :, :] = coeffs[..., 0, :, :, :] - k1 * kdotu
    out[..., 1, :, :, :] = coeffs[..., 1, :, :, :] - k2 * kdotu
    out[..., 2, :, :, :] = coeffs[..., 2, :, :, :] - k3 * kdotu
    return out


def derivative_array(coeffs, grid, axis):
    """Spectral partial derivative along ``axis`` in {1, 2, 3}."""
    return 1j * grid.derivative_multipliers[axis - 1] * coeffs


def divergence_array(coeffs, grid):
    d1, d2, d3 = grid.derivative_multipliers
    return 1j * (d1 * coeffs[..., 0, :, :, :] + d2 * coeffs[..., 1, :, :, :] + d3 * coeffs[..., 2, :, :, :])


def pairing_array(f, g, grid, weight=None):
    """L^2 pairing Vol * sum Re(f conj(g)) over components and modes."""
    w = grid.multiplicity if weight is None else grid.multiplicity * weight
    prod = (f * np.conj(g)).real
    return grid.volume * np.einsum("...cijk,ijk->...", prod, w)


def sq_norm_array(f, grid, weight=None):
    w = grid.multiplicity if weight is None else grid.multiplicity * weight
    return grid.volume * np.einsum("...cijk,ijk->...", f.real**2 + f.imag**2, w)


def aniso_weight(grid, s, s_prime):
    """(1 + |k_h|^{2s})(1 + |k_3|^{2s'}), with a zero index meaning an unweighted factor."""
    if s < 0 or s_prime < 0:
        raise ValueError("negative Sobolev indices are not supported")
    wh = 1.0 if s == 0 else 1.0 + grid.kh_squared**s
    wv = 1.0 if s_prime == 0 else 1.0 + grid.k3_squared**s_prime
    return np.broadcast_to(wh * wv, grid.spectral_shape)


def norm_series(coeffs, grid):
    """Squared norms used by the solver diagnostics, per leading batch entry.

    Returns a dict with ``l2``, ``gradh`` (|grad_h u|^2), ``d3`` (|d3 u|^2)
    and ``gradh_d3`` (|grad_h d3 u|^2), all squared.
    """
    e = coeffs.real**2 + coeffs.imag**2
    w = grid.multiplicity * grid.volume
    e = np.einsum("...cijk->...ijk", e) * w
    return {
        "l2": np.einsum("...ijk->...", e),
        "gradh": np.einsum("...ijk,ijk->...", e, grid.kh_squared),
        "d3": np.einsum("...ijk,ijk->...", e, grid.k3_squared),
        "gradh_d3": np.einsum("...ijk,ijk->...", e, grid.kh_squared * grid.k3_squared),
    }


# -- user-facing types --------------------------------------------------------
@dataclass(frozen=True)
class AnisoIndex:
    s: float = 0.0
    s_prime: float = 0.0

    def __post_init__(self):
        if self.s < 0 or self.s_prime < 0:
            raise ValueError("negative Sobolev indices are not supported")


@dataclass(frozen=True)
class MixedNormSpec:
    p: float
    q: float
    order: str = "h_outer"

    def __post_init__(self):
        if self.p < 1 or self.q < 1:
            raise ValueError("mixed norm exponents must be >= 1")
        if self.order not in ("h_outer", "v_outer"):
            raise ValueError("order must be 'h_outer' or 'v_outer'")


@dataclass(frozen=True, eq=False)
class VectorField:
    """Real 3-component field stored by its half-layout spectral coefficients."""

    coeffs: np.ndarray
    grid: Grid
    divfree: bool = False
    _frozen: bool = field(default=True, repr=False)

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex)
        if c.shape != (3,) + self.grid.spectral_shape:
            raise ValueError(f"coefficient shape {c.shape} does not match grid {self.grid.spectral_shape}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, grid):
        return cls(np.zeros((3,) + grid.spectral_shape, dtype=complex), grid, True)

    @classmethod
    def from_physical(cls, samples, grid, divfree=False):
        return to_spectral(samples, grid, divfree)

    def physical(self):
        return to_physical(self)

    def __add__(self, other):
        _check_same_grid(self, other)
        return VectorField(self.coeffs + other.coeffs, self.grid, self.divfree and other.divfree)

    def __sub__(self, other):
        _check_same_grid(self, other)
        return VectorField(self.coeffs - other.coeffs, self.grid, self.divfree and other.divfree)

    def __mul__(self, scalar):
        return VectorField(self.coeffs * scalar, self.grid, self.divfree)

    __rmul__ = __mul__

    def __neg__(self):
        return VectorField(-self.coeffs, self.grid, self.divfree)

    def max_divergence_ratio(self):
        """max_k |k . u_hat(k)| / |u_hat(k)| over modes with nonzero amplitude."""
        k1, k2, k3 = self.grid.wavenumbers
        c = self.coeffs
        kdot = np.abs(k1 * c[0] + k2 * c[1] + k3 * c[2])
        amp = np.sqrt(np.sum(np.abs(c) ** 2, axis=0))
        scale = amp.max() if amp.size else 0.0
        live = amp > 1e-14 * max(scale, 1e-300)
        if not live.any():
            return 0.0
        return float(np.max(kdot[live] / amp[live]))


def to_physical(f):
    """Physical samples of ``f``, shape (3, N1, N2, N3)."""
    return to_physical_array(f.coeffs, f.grid)


def to_spectral(samples, grid, divfree=False):
    samples = np.asarray(samples, dtype=float)
    if samples.shape != (3,) + grid.physical_shape:
        raise ValueError("samples must have shape (3, N1, N2, N3)")
    return VectorField(to_spectral_array(samples, grid), grid, divfree)


def is_conjugate_symmetric(f, atol=1e-12):
    """Check u_hat(-k) = conj(u_hat(k)) on the self-conjugate planes of the half layout."""
    N1, N2, N3 = f.grid.resolution
    c = f.coeffs
    scale = max(np.abs(c).max(), 1e-300)
    for j in (0, N3 // 2):
        plane = c[..., j]
        flipped = np.roll(plane[:, ::-1, ::-1], shift=(1, 1), axis=(1, 2))
        if np.abs(plane - np.conj(flipped)).max() > atol * scale:
            return False
    return True


def leray_project(f):
    """L^2-orthogonal projection onto divergence-free fields."""
    return VectorField(leray_array(f.coeffs, f.grid), f.grid, True)


def horizontal_laplacian(f):
    """Apply d1^2 + d2^2 mode-wise (multiplier -|k_h|^2)."""
    return VectorField(-f.grid.kh_squared * f.coeffs, f.grid, f.divfree)


def partial_derivative(f, axis):
    if axis not in (1, 2, 3):
        raise ValueError("axis must be 1, 2 or 3")
    return VectorField(derivative_array(f.coeffs, f.grid, axis), f.grid, f.divfree)


def divergence(f):
    """Scalar divergence coefficients, shape of the spectral grid."""
    return divergence_array(f.coeffs, f.grid)


def inner(f, g):
    """L^2 inner product of two fields."""
    _check_same_grid(f, g)
    return float(pairing_array(f.coeffs, g.coeffs, f.grid))


def inner_01(f, g):
    """Scalar product of H^{0,1}: (f, g) + (d3 f, d3 g)."""
    _check_same_grid(f, g)
    return float(pairing_array(f.coeffs, g.coeffs, f.grid, 1.0 + f.grid.k3_squared))


def l2_norm(f):
    return float(np.sqrt(sq_norm_array(f.coeffs, f.grid)))


def aniso_norm(f, idx=AnisoIndex()):
    """Anisotropic Sobolev norm ||f||_{s,s'}."""
    if not isinstance(idx, AnisoIndex):
        idx = AnisoIndex(*idx)
    w = aniso_weight(f.grid, idx.s, idx.s_prime)
    return float(np.sqrt(sq_norm_array(f.coeffs, f.grid, w)))


def gradh_norm(f):
    """|grad_h f|_{L^2}."""
    return float(np.sqrt(sq_norm_array(f.coeffs, f.grid, f.grid.kh_squared)))


def _pointwise_magnitude(f, oversample):
    if oversample > 1:
        u, g = to_physical_fine(f.coeffs, f.grid, oversample)
    else:
        u, g = to_physical(f), f.grid
    return np.sqrt(np.einsum("c...,c...->...", u, u)), g


def lp_norm(f, p, oversample=1):
    """L^p norm of |f(x)| by grid quadrature; ``p = inf`` gives the max."""
    if p < 1:
        raise ValueError("p must be >= 1")
    mag, g = _pointwise_magnitude(f, oversample)
    if np.isinf(p):
        return float(mag.max())
    return float((g.volume / g.npts * np.sum(mag**p)) ** (1.0 / p))


def _power_mean(a, exponent, axis, cell):
    if np.isinf(exponent):
        return a.max(axis=axis)
    return (cell * np.sum(a**exponent, axis=axis)) ** (1.0 / exponent)


def mixed_norm(f, spec):
    """Iterated L^p_h(L^q_v) (``h_outer``) or L^q_v(L^p_h) (``v_outer``) norm."""
    mag, g = _pointwise_magnitude(f, 1)
    L1, L2, L3 = g.box_lengths
    N1, N2, N3 = g.resolution
    dh = L1 * L2 / (N1 * N2)
    dv = L3 / N3
    if spec.order == "h_outer":
        inner_v = _power_mean(mag, spec.q, axis=2, cell=dv)
        return float(_power_mean(inner_v, spec.p, axis=(0, 1), cell=dh))
    inner_h = _power_mean(mag, spec.p, axis=(0, 1), cell=dh)
    return float(_power_mean(inner_h, spec.q, axis=0, cell=dv))


# -- random fields ----------------------------------------------------------
@lru_cache(maxsize=None)
def _shell_order(limits):
    """Mode triples |m_i| <= limits[i], sorted by max|m_i| then lexicographically.

    The ordering of any fixed set of modes does not depend on ``limits`` as
    long as the limits are equal per axis, so draws taken in this order agree
    between resolutions on the modes the resolutions share.
    """
    r = [np.arange(-l, l + 1) for l in limits]
    m = np.stack(np.meshgrid(*r, indexing="ij"), axis=-1).reshape(-1, 3)
    shell = np.abs(m).max(axis=1)
    order = np.lexsort((m[:, 2], m[:, 1], m[:, 0], shell))
    return m[order]


def random_divfree_field(grid, decay_exponent, amplitude, rng, max_index=None):
    """Gaussian divergence-free field with |u_hat(k)| ~ amplitude (1 + |k|)^(-decay).

    Modes are restricted to the dealias mask (and to ``max|m_i| <= max_index``
    when given); the mean mode is zero.  Coefficients are drawn shell by shell
    so that a given seed produces the same low modes on every resolution.
    """
    if decay_exponent <= 2.5:
        raise ValueError("decay_exponent must exceed 5/2")
    limits = grid.dealias_limits
    if max_index is not None:
        limits = tuple(min(l, int(max_index)) for l in limits)
    modes = _shell_order(limits)
    draws = rng.standard_normal((modes.shape[0], 3, 2))
    if amplitude == 0:
        return VectorField.zeros(grid)
    G = draws[..., 0] + 1j * draws[..., 1]
    N = grid.resolution
    full = np.zeros((3,) + N, dtype=complex)
    idx = tuple(modes[:, i] % N[i] for i in range(3))
    full[:, idx[0], idx[1], idx[2]] = G.T
    neg = tuple((-modes[:, i]) % N[i] for i in range(3))
    herm = np.zeros_like(full)
    herm[:, idx[0], idx[1], idx[2]] = 0.5 * (G.T + np.conj(full[:, neg[0], neg[1], neg[2]]))
    half = herm[..., : N[2] // 2 + 1]
    kmag = np.sqrt(grid.k_squared)
    env = amplitude * (1.0 + kmag) ** (-decay_exponent)
    env[0, 0, 0] = 0.0
    coeffs = leray_array(half * env, grid)
    return VectorField(coeffs, grid, True)


# -- binary snapshots ---------------------------------------------------------
def _full_spectrum(coeffs, grid):
    N1, N2, N3 = grid.resolution
    full = np.zeros((3, N1, N2, N3), dtype=complex)
    h = N3 // 2 + 1
    full[..., :h] = coeffs
    m3 = np.arange(h, N3)
    src = N3 - m3
    i1 = (-np.arange(N1)) % N1
    i2 = (-np.arange(N2)) % N2
    full[..., h:] = np.conj(coeffs[:, i1[:, None, None], i2[None, :, None], src[None, None, :]])
    return full


def write_snapshot(f, path_or_file):
    """Write ``f`` in the ANSF binary format.

    Layout (little-endian): magic ``ANSF``; u32 version; u32 N1, N2, N3;
    f64 L1, L2, L3; then components 1, 2, 3, each as N1*N2*N3 complex
    coefficients in row-major order of the FFT mode index, every
    coefficient stored as an (f64 real, f64 imaginary) pair.
    """
    g = f.grid
    header = SNAPSHOT_MAGIC + struct.pack("<I3I3d", SNAPSHOT_VERSION, *g.resolution, *g.box_lengths)
    body = _full_spectrum(f.coeffs, g).astype("<c16").tobytes(order="C")
    if hasattr(path_or_file, "write"):
        path_or_file.write(header + body)
    else:
        with open(path_or_file, "wb") as fh:
            fh.write(header + body)


def read_snapshot(path_or_file, dealias_fraction=2.0 / 3.0):
    if hasattr(path_or_file, "read"):
        data = path_or_file.read()
    else:
        with open(path_or_file, "rb") as fh:
            data = fh.read()
    if data[:4] != SNAPSHOT_MAGIC:
        raise ValueError("not an ANSF snapshot")
    version, n1, n2, n3, l1, l2, l3 = struct.unpack("<I3I3d", data[4:44])
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    grid = Grid((l1, l2, l3), (n1, n2, n3), dealias_fraction)
    full = np.frombuffer(data[44:], dtype="<c16").reshape(3, n1, n2, n3)
    return VectorField(full[..., : n3 // 2 + 1].copy(), grid)
