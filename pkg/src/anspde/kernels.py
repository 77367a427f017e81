"""Backend selection for the pointwise kernels.

The compiled extension ``anspde._kernels`` is used when it was built;
otherwise the numpy implementation in ``anspde._kernels_py`` is used.
Setting ``ANSPDE_PURE_PYTHON=1`` forces the numpy backend.  Both backends
fill pointwise arrays with identical arithmetic and the reductions happen
here, so results do not depend on the backend.
"""

import os

import numpy as np

from . import _kernels_py

if os.environ.get("ANSPDE_PURE_PYTHON"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"


def damping_pointwise(u, alpha, backend=None):
    """Return (|u|^{2 alpha} u, sum of |u|^{2 alpha + 2}) per batch entry.

    Args:
        u: real array of shape (batch, 3, npts).
        alpha: exponent parameter.
        backend: optional module override (used by the benchmark and tests).
    """
    impl = backend or _impl
    u = np.ascontiguousarray(u, dtype=np.float64)
    out = np.empty_like(u)
    dens = np.empty((u.shape[0], u.shape[2]))
    impl.damping_pointwise(u, float(alpha), out, dens)
    return out, dens.sum(axis=1)


def weighted_power_sum(r, g, p, backend=None):
    """Per-batch sum of r^p |g|^2 (r: (batch, npts), g: (batch, 3, npts))."""
    impl = backend or _impl
    r = np.ascontiguousarray(r, dtype=np.float64)
    g = np.ascontiguousarray(g, dtype=np.float64)
    terms = np.empty(r.shape)
    impl.weighted_power_terms(r, g, float(p), terms)
    return terms.sum(axis=1)


def monotonicity_gap(y, z, alpha, kappa, backend=None):
    """Pointwise monotonicity gap of the map y -> |y|^{2 alpha} y, rows of shape (n, 3)."""
    impl = backend or _impl
    y = np.ascontiguousarray(np.atleast_2d(y), dtype=np.float64)
    z = np.ascontiguousarray(np.atleast_2d(z), dtype=np.float64)
    gap = np.empty(y.shape[0])
    impl.monotonicity_gap(y, z, float(alpha), float(kappa), gap)
    return gap
