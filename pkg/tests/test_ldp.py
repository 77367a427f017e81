"""Tests for controls, the Y norm, rate upper bounds and the small-noise experiments."""

import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from setups import desk_config, initial_field, multiplicative_coef, rate_setup, rate_tolerance, small_grid

from anspde.ldp import (
    ConditionError,
    Control,
    check_primed_regime,
    compactness_probe,
    control_energy,
    d1_distance,
    random_controls,
    rate_upper_bound,
    weak_convergence_experiment,
    y_distances,
    y_norm,
)
from anspde.noise import DiffusionCoefficient, NoiseBasis
from anspde.nonlinear_ops import DriftParams, fixtures
from anspde.solver import run_deterministic, run_skeleton
from anspde.spectral_field import Grid, VectorField, leray_array, to_spectral_array

LINEAR = DriftParams(nu=0.7, convective=False, damping=False)


def _d1_oracle(phi, psi, n_terms=48, n_quad=20000):
    """Midpoint quadrature against the cosine basis, pairs ordered by (j + k, j)."""
    T = phi.T
    t = (np.arange(n_quad) + 0.5) * T / n_quad
    diff = np.stack([phi.value(s) - psi.value(s) for s in t])
    pairs = sorted(((j, k) for j in range(n_terms) for k in range(phi.n_modes)), key=lambda p: (p[0] + p[1], p[0]))
    total = 0.0
    for i, (j, k) in enumerate(pairs[:n_terms], start=1):
        e = np.full_like(t, 1 / math.sqrt(T)) if j == 0 else math.sqrt(2 / T) * np.cos(j * math.pi * t / T)
        total += 2.0**-i * abs(np.sum(e * diff[:, k]) * T / n_quad)
    return total


class TestControl:
    def test_energy_example(self):
        phi = Control(np.array([0.0, 2.0]), np.array([[3.0, 4.0]]))
        assert control_energy(phi) == 25.0
        assert phi.in_ball(50.0) and not phi.in_ball(49.0)

    def test_piecewise_energy(self):
        phi = Control(np.array([0.0, 0.5, 2.0]), np.array([[1.0], [2.0]]))
        assert phi.energy == pytest.approx(0.5 * (0.5 + 6.0))

    @given(st.floats(-3, 3), st.integers(1, 5))
    def test_scaling_and_refinement(self, lam, k):
        phi = Control(np.array([0.0, 0.3, 1.0]), np.array([[1.0, -2.0], [0.5, 0.0]]))
        assert phi.scaled(lam).energy == pytest.approx(lam**2 * phi.energy, rel=1e-12, abs=1e-14)
        r = phi.refined(k)
        assert r.energy == pytest.approx(phi.energy, rel=1e-12)
        assert len(r.breakpoints) == 2 * k + 1

    def test_value_at_breakpoints(self):
        phi = Control(np.array([0.0, 1.0, 2.0]), np.array([[1.0], [2.0]]))
        assert phi.value(0.0)[0] == 1.0
        assert phi.value(1.0)[0] == 2.0
        assert phi.value(2.0)[0] == 2.0

    def test_json_round_trip(self):
        phi = Control(np.array([0.0, 0.1, 0.2]), np.eye(2))
        back = Control.from_dict(json.loads(phi.to_json()))
        np.testing.assert_array_equal(back.coefficients, phi.coefficients)

    @pytest.mark.parametrize("b,c", [([0.0], [[1.0]]), ([0.0, 0.0], [[1.0]]), ([0.0, 1.0, 2.0], [[1.0]])])
    def test_rejects(self, b, c):
        with pytest.raises(ValueError):
            Control(np.array(b), np.array(c))

    def test_random_controls_in_ball(self):
        cs = random_controls(10, 2.0, 0.5, 3, 4, seed=1)
        assert all(c.in_ball(2.0) for c in cs)
        assert [2 * c.energy for c in cs[:5]] == pytest.approx([2.0] * 5)
        assert all(2 * c.energy < 2.0 for c in cs[5:])


class TestD1:
    def test_matches_quadrature(self):
        rng = np.random.default_rng(4)
        phi = Control(np.array([0.0, 0.13, 0.4, 1.0]), rng.standard_normal((3, 3)))
        psi = Control(np.array([0.0, 0.5, 1.0]), rng.standard_normal((2, 3)))
        assert d1_distance(phi, psi) == pytest.approx(_d1_oracle(phi, psi), rel=1e-6)

    def test_metric_properties(self):
        phi = Control.constant(1.0, [1.0, 2.0])
        psi = Control.zero(1.0, 2, 3)
        assert d1_distance(phi, phi) == 0.0
        assert d1_distance(phi, psi) == pytest.approx(d1_distance(psi, phi))

    def test_incompatible(self):
        with pytest.raises(ValueError):
            d1_distance(Control.zero(1.0, 2), Control.zero(1.0, 3))


class TestYNorm:
    def test_linear_mode_closed_form(self):
        g = Grid.cube(8)
        x = g.coordinates()
        s = np.zeros((3,) + g.physical_shape)
        s[1] = np.cos(2 * x[0] + x[2])
        u0 = VectorField(leray_array(to_spectral_array(s, g), g), g, True)
        T, nu, kh2 = 0.5, 0.7, 4.0
        tr = run_deterministic(desk_config(g, dt=1e-3, T=T, drift=LINEAR), u0)
        l2 = tr.norms["l2"][0, 0]
        y = y_norm(tr)
        assert y.sup_l2 == pytest.approx(l2, rel=1e-12)
        expect = l2 * math.sqrt((1 + kh2) * (1 - math.exp(-2 * nu * kh2 * T)) / (2 * nu * kh2))
        assert y.h10_l2 == pytest.approx(expect, rel=1e-5)
        assert y.total == y.sup_l2 + y.h10_l2

    def test_zero_trajectory(self):
        cfg = desk_config(T=0.05)
        y = y_norm(run_deterministic(cfg, VectorField.zeros(cfg.grid)))
        assert y.total == 0.0

    def test_distances(self):
        cfg = desk_config(T=0.05)
        u0 = initial_field(cfg.grid)
        a = run_deterministic(cfg, u0)
        assert y_distances(a, a)[0] == 0.0
        z = run_deterministic(cfg, VectorField.zeros(cfg.grid))
        assert y_distances(a, z)[0] == pytest.approx(y_norm(a).total, rel=1e-12)
        with pytest.raises(ValueError):
            y_distances(a, run_deterministic(replace(cfg, T=0.06), u0))


@pytest.fixture(scope="module")
def rate():
    cfg, coef, u0, phi, cands = rate_setup()
    target = run_skeleton(cfg, u0, coef, phi)
    return cfg, coef, u0, phi, cands, target, rate_tolerance(target, cfg, coef, u0)


class TestRate:
    def test_uncontrolled_target_is_exact_zero(self, rate):
        cfg, coef, u0, _, cands, _, tol = rate
        target = run_skeleton(cfg, u0, coef, Control.zero(cfg.T, coef.n_modes))
        est = rate_upper_bound(target, cands, cfg, coef, u0, 1e-12)
        assert est.value == 0.0 and est.status == "exact_zero"

    def test_infeasible(self, rate):
        cfg, coef, u0, _, cands, _, _ = rate
        far = VectorField(u0.coeffs * 100.0, u0.grid, True)
        est = rate_upper_bound(far, cands, cfg, coef, u0, 1e-3)
        assert est.value == math.inf and est.status == "infeasible" and est.control is None

    def test_more_candidates_never_worse(self, rate):
        cfg, coef, u0, phi, cands, target, tol = rate
        values = [rate_upper_bound(target, cands[:k], cfg, coef, u0, tol).value for k in range(1, len(cands) + 1)]
        assert all(b <= a for a, b in zip(values, values[1:]))
        assert values[-1] <= phi.energy

    def test_refinement_matches_fixture(self, rate):
        cfg, coef, u0, phi, cands, target, tol = rate
        fx = fixtures()["rate_refinement"]
        assert tol == pytest.approx(fx["tol_Y"], rel=1e-9)
        raw = rate_upper_bound(target, cands, cfg, coef, u0, tol)
        ref = rate_upper_bound(target, cands, cfg, coef, u0, tol, refine=True)
        assert raw.value == pytest.approx(fx["raw"], rel=1e-9)
        assert ref.value == pytest.approx(fx["refined"], rel=1e-9)
        assert ref.value <= raw.value <= phi.energy
        assert ref.residual <= tol
        assert ref.history == sorted(ref.history, reverse=True)


class TestWeakConvergence:
    def test_additive_linear_slope_is_half(self):
        g = small_grid()
        cfg = desk_config(g, T=0.1, drift=LINEAR)
        coef = DiffusionCoefficient.additive(NoiseBasis(g, 4), 0.5)
        phi = Control.constant(cfg.T, [1.0, 0.0, -1.0, 0.5])
        tab = weak_convergence_experiment(phi, [1e-1, 1e-2, 1e-3], 20, cfg, coef, initial_field(g, mask=cfg.mask))
        assert tab.slope == pytest.approx(0.5, abs=1e-6)

    def test_zero_epsilon(self):
        g = small_grid()
        cfg = desk_config(g, T=0.05)
        coef = multiplicative_coef(g, gradient=False)
        phi = Control.constant(cfg.T, np.ones(coef.n_modes))
        tab = weak_convergence_experiment(phi, [0.0, 0.1], 3, cfg, coef, initial_field(g, mask=cfg.mask))
        assert tab.mean_Y[0] == 0.0 and tab.stderr[0] == 0.0
        assert math.isnan(tab.slope)
        assert tab.rows()[1]["M_mc"] == 3

    def test_gradient_noise_rejected(self):
        coef = multiplicative_coef(small_grid(), gradient=True)
        with pytest.raises(ConditionError):
            check_primed_regime(coef)
        cfg = desk_config(T=0.05)
        with pytest.raises(ConditionError):
            weak_convergence_experiment(Control.zero(cfg.T, coef.n_modes), [0.1], 2, cfg, coef, initial_field(cfg.grid))

    def test_primed_constants_returned(self):
        c = check_primed_regime(multiplicative_coef(small_grid(), gradient=False))
        assert c.K2 == c.Kt2 == c.L2 == 0


@pytest.fixture(scope="module")
def parts():
    g = small_grid()
    cfg = desk_config(g, dt=0.1 / 64, T=0.1)
    coef = multiplicative_coef(g, n_modes=4, gradient=False)
    return cfg, coef, initial_field(g, mask=cfg.mask)


class TestCompactness:
    def test_identical_controls(self, parts):
        cfg, coef, u0 = parts
        phi = random_controls(1, 1.0, cfg.T, coef.n_modes, 4, seed=2)[0]
        rep = compactness_probe(1.0, 2, cfg, coef, u0, controls=[phi, phi])
        assert rep.d1[0] == 0.0 and rep.y[0] == 0.0

    def test_scaling_towards_one(self, parts):
        cfg, coef, u0 = parts
        phi = random_controls(1, 4.0, cfg.T, coef.n_modes, 4, seed=3)[0]
        lams = [0.5, 0.9, 0.99]
        rep = compactness_probe(4.0, 0, cfg, coef, u0, controls=[phi] + [phi.scaled(l) for l in lams])
        d1 = [rep.d1[i] for i in range(3)]
        y = [rep.y[i] for i in range(3)]
        assert d1 == sorted(d1, reverse=True) and y == sorted(y, reverse=True)
        assert y[-1] < 0.05 * y[0]

    def test_oscillating_controls_converge(self, parts):
        cfg, coef, u0 = parts
        zero = Control.zero(cfg.T, coef.n_modes)
        seq = []
        for n in (1, 4, 16):
            signs = np.resize([1.0, -1.0], 2 * n)
            seq.append(Control(np.linspace(0, cfg.T, 2 * n + 1), np.outer(signs, np.full(coef.n_modes, 3.0))))
        assert len({round(c.energy, 12) for c in seq}) == 1
        d1 = [d1_distance(c, zero) for c in seq]
        y = [float(y_distances(run_skeleton(cfg, u0, coef, c), run_skeleton(cfg, u0, coef, zero))[0]) for c in seq]
        assert d1 == sorted(d1, reverse=True) and y == sorted(y, reverse=True)
        assert y[-1] < 0.2 * y[0]

    @settings(max_examples=5, deadline=None)
    @given(st.integers(0, 1000))
    def test_trend(self, seed):
        g = small_grid()
        cfg = desk_config(g, T=0.05)
        coef = multiplicative_coef(g, n_modes=4, gradient=False)
        rep = compactness_probe(1.0, 6, cfg, coef, initial_field(g, mask=cfg.mask), seed=seed)
        assert len(rep.pairs) == 15
        assert np.all(rep.d1 >= 0) and np.all(rep.y >= 0)
