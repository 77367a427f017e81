# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled pointwise kernels.

Every function here has a numpy twin in ``_kernels_py`` that performs the
same floating-point operations in the same order, so both backends give
bit-identical results; reductions happen in ``anspde.kernels``.
"""
from libc.math cimport floor, pow, sqrt


cdef inline double _qpow(double x, int k) noexcept nogil:
    """x^(k/4) for x >= 0 by repeated squaring of the fourth root."""
    cdef double q = sqrt(sqrt(x)), r = 1.0
    while k > 0:
        if k & 1:
            r *= q
        q *= q
        k >>= 1
    return r


cdef inline int _quarter_exponent(double e) noexcept:
    """4 e when it is a small nonnegative integer, else -1."""
    cdef double q = 4.0 * e
    if q >= 0.0 and q <= 64.0 and q == floor(q):
        return <int>q
    return -1


def damping_pointwise(const double[:, :, ::1] u, double alpha, double[:, :, ::1] out, double[:, ::1] dens):
    """Write |u|^{2 alpha} u into ``out`` and |u|^{2 alpha + 2} into ``dens``.

    ``u`` and ``out`` have shape (batch, 3, npts), ``dens`` (batch, npts).
    """
    cdef Py_ssize_t nb = u.shape[0], n = u.shape[2]
    cdef Py_ssize_t b, i
    cdef double x, y, z, r2, w
    cdef int k = _quarter_exponent(alpha)
    for b in range(nb):
        for i in range(n):
            x = u[b, 0, i]
            y = u[b, 1, i]
            z = u[b, 2, i]
            r2 = x * x + y * y + z * z
            if r2 <= 0.0:
                w = 0.0
            elif k >= 0:
                w = _qpow(r2, k)
            else:
                w = pow(r2, alpha)
            out[b, 0, i] = w * x
            out[b, 1, i] = w * y
            out[b, 2, i] = w * z
            dens[b, i] = w * r2


def weighted_power_terms(const double[:, ::1] r, const double[:, :, ::1] g, double p, double[:, ::1] terms):
    """Write r^p |g|^2 into ``terms`` (r: (batch, npts), g: (batch, 3, npts))."""
    cdef Py_ssize_t nb = g.shape[0], n = g.shape[2]
    cdef Py_ssize_t b, i
    cdef double rv, g2
    cdef int k = _quarter_exponent(p)
    for b in range(nb):
        for i in range(n):
            rv = r[b, i]
            g2 = g[b, 0, i] * g[b, 0, i] + g[b, 1, i] * g[b, 1, i] + g[b, 2, i] * g[b, 2, i]
            if rv > 0.0:
                terms[b, i] = (_qpow(rv, k) if k >= 0 else pow(rv, p)) * g2
            elif p == 0.0:
                terms[b, i] = g2
            else:
                terms[b, i] = 0.0


def monotonicity_gap(const double[:, ::1] y, const double[:, ::1] z, double alpha, double kappa, double[::1] gap):
    """(|y|^{2a} y - |z|^{2a} z).(y - z) - kappa |y - z|^2 (|y| + |z|)^{2a} for rows of y, z."""
    cdef Py_ssize_t n = y.shape[0], i
    cdef double y0, y1, y2, z0, z1, z2, ny, nz, wy, wz, ws, d0, d1, d2, num, d2n
    cdef int k = _quarter_exponent(2.0 * alpha)
    for i in range(n):
        y0 = y[i, 0]
        y1 = y[i, 1]
        y2 = y[i, 2]
        z0 = z[i, 0]
        z1 = z[i, 1]
        z2 = z[i, 2]
        ny = sqrt(y0 * y0 + y1 * y1 + y2 * y2)
        nz = sqrt(z0 * z0 + z1 * z1 + z2 * z2)
        if k >= 0:
            wy = _qpow(ny, k)
            wz = _qpow(nz, k)
            ws = _qpow(ny + nz, k)
        else:
            wy = pow(ny, 2.0 * alpha)
            wz = pow(nz, 2.0 * alpha)
            ws = pow(ny + nz, 2.0 * alpha)
        d0 = y0 - z0
        d1 = y1 - z1
        d2 = y2 - z2
        num = (wy * y0 - wz * z0) * d0 + (wy * y1 - wz * z1) * d1 + (wy * y2 - wz * z2) * d2
        d2n = d0 * d0 + d1 * d1 + d2 * d2
        gap[i] = num - kappa * d2n * ws
