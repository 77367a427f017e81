"""Pure-numpy twin of the compiled pointwise kernels.

The arithmetic mirrors ``_kernels.pyx`` operation by operation so the two
backends agree bit for bit.
"""

import numpy as np


def _quarter_exponent(e):
    q = 4.0 * e
    return int(q) if 0.0 <= q <= 64.0 and q == np.floor(q) else -1


def _power(x, e):
    """x^e for x >= 0; integer multiples of 1/4 by repeated squaring of the fourth root."""
    k = _quarter_exponent(e)
    if k < 0:
        return np.power(x, e)
    q = np.sqrt(np.sqrt(x))
    r = np.ones_like(q)
    while k > 0:
        if k & 1:
            r = r * q
        q = q * q
        k >>= 1
    return r


def _sq3(a):
    return a[..., 0, :] * a[..., 0, :] + a[..., 1, :] * a[..., 1, :] + a[..., 2, :] * a[..., 2, :]


def damping_pointwise(u, alpha, out, dens):
    r2 = _sq3(u)
    w = np.where(r2 > 0.0, _power(r2, alpha), 0.0)
    np.multiply(w[:, None, :], u, out=out)
    np.multiply(w, r2, out=dens)


def weighted_power_terms(r, g, p, terms):
    g2 = _sq3(g)
    pos = r > 0.0
    w = _power(np.where(pos, r, 0.0), p)
    terms[...] = np.where(pos, w * g2, g2 if p == 0.0 else 0.0)


def monotonicity_gap(y, z, alpha, kappa, gap):
    yt, zt = y.T, z.T
    ny = np.sqrt(_sq3(yt))
    nz = np.sqrt(_sq3(zt))
    e = 2.0 * alpha
    wy, wz, ws = _power(ny, e), _power(nz, e), _power(ny + nz, e)
    d = yt - zt
    num = (wy * yt[0] - wz * zt[0]) * d[0] + (wy * yt[1] - wz * zt[1]) * d[1] + (wy * yt[2] - wz * zt[2]) * d[2]
    gap[...] = num - kappa * _sq3(d) * ws
