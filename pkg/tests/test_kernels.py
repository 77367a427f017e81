"""Compiled and numpy kernel backends agree bit for bit."""

import numpy as np
import pytest

from anspde import _kernels_py, kernels

try:
    from anspde import _kernels as compiled
except ImportError:  # extension not built
    compiled = None

needs_ext = pytest.mark.skipif(compiled is None, reason="compiled extension not built")


@pytest.fixture
def data():
    r = np.random.default_rng(0)
    return r.standard_normal((2, 3, 500)), r.random((2, 500)), r.standard_normal((1000, 3)), r.standard_normal((1000, 3))


def test_backend_name():
    assert kernels.BACKEND in ("compiled", "python")


def test_python_damping_reference(data):
    u = data[0]
    out, sums = kernels.damping_pointwise(u, 1.5, backend=_kernels_py)
    mag = np.sqrt(np.sum(u**2, axis=1, keepdims=True))
    np.testing.assert_allclose(out, mag**3 * u, rtol=1e-13)
    np.testing.assert_allclose(sums, np.sum(mag[:, 0] ** 5, axis=1), rtol=1e-13)


def test_python_power_sum_reference(data):
    r, g = data[1], data[0]
    expect = np.sum(r**2.5 * np.sum(g**2, axis=1), axis=1)
    np.testing.assert_allclose(kernels.weighted_power_sum(r, g, 2.5, backend=_kernels_py), expect, rtol=1e-13)
    np.testing.assert_allclose(kernels.weighted_power_sum(r, g, 0.0, backend=_kernels_py), np.sum(g**2, axis=(1, 2)), rtol=1e-13)


def test_zero_vectors(data):
    u = np.zeros((1, 3, 4))
    out, sums = kernels.damping_pointwise(u, 1.5, backend=_kernels_py)
    assert not out.any() and sums[0] == 0.0


def _same(a, b, exponent):
    # quarter-integer exponents share arithmetic; others go through two different pow()s
    if float(4 * exponent).is_integer():
        np.testing.assert_array_equal(a, b)
    else:
        np.testing.assert_allclose(a, b, rtol=1e-14, atol=1e-14 * np.abs(a).max())


@needs_ext
@pytest.mark.parametrize("alpha", [1.25, 1.3, 1.5, 2.0])
def test_damping_identical(data, alpha):
    u = data[0].copy()
    u[0, :, :3] = 0.0
    a = kernels.damping_pointwise(u, alpha, backend=_kernels_py)
    b = kernels.damping_pointwise(u, alpha, backend=compiled)
    _same(a[0], b[0], alpha)
    _same(a[1], b[1], alpha)


@needs_ext
@pytest.mark.parametrize("p", [0.0, 1.5, 2.5, 1.3])
def test_weighted_power_sum_identical(data, p):
    r = data[1].copy()
    r[0, :5] = 0.0
    a = kernels.weighted_power_sum(r, data[0], p, backend=_kernels_py)
    b = kernels.weighted_power_sum(r, data[0], p, backend=compiled)
    _same(a, b, p)


@needs_ext
@pytest.mark.parametrize("alpha", [1.25, 1.3, 1.5, 2.0])
def test_monotonicity_gap_identical(data, alpha):
    a = kernels.monotonicity_gap(data[2], data[3], alpha, 0.125, backend=_kernels_py)
    b = kernels.monotonicity_gap(data[2], data[3], alpha, 0.125, backend=compiled)
    _same(a, b, 2 * alpha)
