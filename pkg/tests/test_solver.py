"""Tests for the time integrator, ensembles, weak form and coupled runs."""

import math
from dataclasses import replace

import numpy as np
import pytest
from setups import desk_config, initial_field, multiplicative_coef, small_grid

from anspde import rng as rngmod
from anspde.ldp import Control
from anspde.noise import DiffusionCoefficient, NoiseBasis
from anspde.nonlinear_ops import DriftParams
from anspde.solver import (
    BlowUpError,
    SolverConfig,
    Trajectory,
    couple_runs,
    run_deterministic,
    run_ensemble,
    run_galerkin,
    run_skeleton,
    step,
    weak_form_residual,
)
from anspde.spectral_field import Grid, VectorField, leray_array, to_spectral_array


def _mode(grid, m, amp=1.0):
    x = grid.coordinates()
    s = np.zeros((3,) + grid.physical_shape)
    s[1] = amp * np.cos(sum(m[i] * x[i] for i in range(3)))
    return VectorField(leray_array(to_spectral_array(s, grid), grid), grid, True)


@pytest.fixture(scope="module")
def grid():
    return small_grid()


@pytest.fixture(scope="module")
def coef(grid):
    return multiplicative_coef(grid)


class TestConfig:
    @pytest.mark.parametrize(
        "kw",
        [dict(dt=0.0), dict(dt=2.0, T=1.0), dict(epsilon=-1.0), dict(scheme="rk4"), dict(store_every=0), dict(galerkin_cutoff=0), dict(galerkin_cutoff=100), dict(noise_cutoff=-1)],
    )
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            SolverConfig(grid=Grid.cube(8), **kw)

    def test_steps_and_mask(self):
        c = SolverConfig(grid=Grid.cube(16), dt=0.01, T=0.5, galerkin_cutoff=8)
        assert c.n_steps == 50
        assert c.mask.sum() == Grid.cube(16).shell_mask(8).sum()


class TestDeterministic:
    def test_linear_mode_matches_exponential(self):
        g = Grid.cube(8)
        cfg = SolverConfig(DriftParams(nu=0.7, convective=False, damping=False), g, dt=0.01, T=1.0)
        u0 = _mode(g, (2, 0, 1))
        tr = run_deterministic(cfg, u0)
        expect = math.exp(-0.7 * 4 * 1.0) * np.abs(u0.coeffs).max()
        assert np.abs(tr.final_state().coeffs).max() == pytest.approx(expect, rel=1e-12)

    def test_plain_scheme_converges_to_integrating_factor(self):
        g = Grid.cube(8)
        u0 = _mode(g, (1, 1, 0))
        errs = []
        for dt in (0.02, 0.01, 0.005):
            cfg = SolverConfig(DriftParams(convective=False, damping=False), g, dt=dt, T=0.4, scheme="em_plain")
            got = np.abs(run_deterministic(cfg, u0).final_state().coeffs).max()
            errs.append(abs(got - math.exp(-2 * 0.4) * np.abs(u0.coeffs).max()))
        assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.1)
        assert errs[1] / errs[2] == pytest.approx(2.0, rel=0.1)

    def test_h01_nonincreasing(self, grid):
        cfg = desk_config(grid, dt=0.005)
        tr = run_deterministic(cfg, initial_field(grid, mask=cfg.mask))
        assert np.all(np.diff(tr.norms["h01"][0]) <= 1e-12)

    def test_step_matches_trajectory(self, grid):
        cfg = desk_config(grid)
        u0 = initial_field(grid, mask=cfg.mask)
        tr = run_deterministic(replace(cfg, T=0.02), u0)
        u = step(step(u0, 0.0, cfg, None), 0.01, cfg, None)
        np.testing.assert_array_equal(u.coeffs, tr.final_state().coeffs)

    def test_blow_up_detected(self, grid):
        cfg = SolverConfig(DriftParams(alpha=2.0), grid, dt=0.1, T=1.0)
        with pytest.warns(RuntimeWarning), pytest.raises(BlowUpError):
            run_deterministic(cfg, initial_field(grid, amplitude=1e4))


class TestStochastic:
    def test_member_independent_of_batch(self, grid, coef):
        cfg = desk_config(grid, T=0.05)
        u0 = initial_field(grid, mask=cfg.mask)
        ens = run_ensemble(cfg, u0, coef, 5)
        one = run_galerkin(cfg, u0, coef, member=3)
        np.testing.assert_array_equal(ens.member(3).states, one.states)

    def test_workers_do_not_change_results(self, grid, coef):
        cfg = desk_config(grid, dt=0.025, T=0.05, store_every=2)
        u0 = initial_field(grid, mask=cfg.mask)
        a = run_ensemble(cfg, u0, coef, 60, workers=1)
        b = run_ensemble(cfg, u0, coef, 60, workers=2)
        np.testing.assert_array_equal(a.states, b.states)
        assert a.size == 60

    def test_store_every(self, grid, coef):
        cfg = desk_config(grid, dt=0.01, T=0.07, store_every=3)
        tr = run_galerkin(cfg, initial_field(grid, mask=cfg.mask), coef)
        np.testing.assert_allclose(tr.store_times, [0.0, 0.03, 0.06, 0.07])
        assert tr.norms["h01"].shape == (1, 8)

    def test_zero_noise_cutoff_is_deterministic(self, grid, coef):
        cfg = desk_config(grid, T=0.05)
        u0 = initial_field(grid, mask=cfg.mask)
        a = run_galerkin(replace(cfg, noise_cutoff=0), u0, coef)
        b = run_deterministic(cfg, u0)
        np.testing.assert_allclose(a.states, b.states, atol=1e-15)

    def test_galerkin_cutoff_respected(self):
        g = Grid.cube(16)
        cfg = SolverConfig(grid=g, dt=0.01, T=0.03, galerkin_cutoff=8)
        coef = multiplicative_coef(g)
        tr = run_galerkin(cfg, initial_field(g), coef)
        full = tr.final_state().coeffs
        assert np.all(full[:, ~cfg.mask] == 0)

    def test_weak_form_residual_first_order(self, grid, coef):
        u0 = initial_field(grid)
        v = initial_field(grid, seed=99)
        res = []
        for dt in (0.01, 0.005):
            cfg = desk_config(grid, dt=dt, T=0.1)
            tr = run_galerkin(cfg, u0, coef)
            res.append(weak_form_residual(tr, v, 0.1, cfg, coef))
        assert res[1] < 0.75 * res[0]

    def test_weak_form_requires_all_steps(self, grid, coef):
        cfg = desk_config(grid, T=0.04, store_every=2)
        tr = run_galerkin(cfg, initial_field(grid), coef)
        with pytest.raises(ValueError):
            weak_form_residual(tr, initial_field(grid), 0.04, cfg, coef)

    def test_concatenate(self, grid, coef):
        cfg = desk_config(grid, T=0.03)
        u0 = initial_field(grid)
        a = run_ensemble(cfg, u0, coef, 2)
        b = run_ensemble(cfg, u0, coef, 2, member_offset=2)
        c = Trajectory.concatenate([a, b])
        np.testing.assert_array_equal(c.states, run_ensemble(cfg, u0, coef, 4).states)


class TestSkeletonAndCoupling:
    def test_zero_control_is_deterministic(self, grid, coef):
        cfg = desk_config(grid, T=0.05)
        u0 = initial_field(grid)
        a = run_skeleton(cfg, u0, coef, Control.zero(cfg.T, coef.n_modes))
        np.testing.assert_array_equal(a.states, run_deterministic(cfg, u0).states)

    def test_control_dimension_checked(self, grid, coef):
        cfg = desk_config(grid, T=0.05)
        with pytest.raises(ValueError):
            run_skeleton(cfg, initial_field(grid), coef, Control.zero(cfg.T, 3))

    def test_refined_control_same_output(self, grid, coef):
        cfg = desk_config(grid, T=0.1)
        phi = Control.constant(cfg.T, np.linspace(-1, 1, coef.n_modes))
        a = run_skeleton(cfg, initial_field(grid), coef, phi)
        b = run_skeleton(cfg, initial_field(grid), coef, phi.refined(4))
        np.testing.assert_allclose(a.states, b.states, rtol=0, atol=1e-14)

    def test_identical_initial_data(self, grid, coef):
        cfg = desk_config(grid, T=0.05)
        u0 = initial_field(grid)
        r = couple_runs(cfg, u0, u0, coef)
        assert r.identical and r.sup_l2 == 0.0

    def test_gap_scales_linearly(self, grid, coef):
        cfg = desk_config(grid, T=0.05)
        u0 = initial_field(grid)
        d = initial_field(grid, seed=5)
        ratios = [couple_runs(cfg, u0, u0 + d * delta, coef).sup_l2 / delta for delta in (1e-3, 1e-5)]
        assert ratios[0] == pytest.approx(ratios[1], rel=1e-2)

    def test_grid_mismatch(self, coef):
        cfg = desk_config(Grid.cube(8))
        with pytest.raises(ValueError):
            couple_runs(cfg, VectorField.zeros(Grid.cube(16)), VectorField.zeros(Grid.cube(16)), coef)

    def test_noise_grid_mismatch(self):
        cfg = desk_config(Grid.cube(8))
        other = DiffusionCoefficient.additive(NoiseBasis(Grid.cube(16), 4))
        with pytest.raises(ValueError):
            run_ensemble(cfg, VectorField.zeros(Grid.cube(8)), other, 1)


def test_rng_streams_are_keyed():
    a = rngmod.brownian_increments(1, 0, 5, 3, 0.1)
    b = rngmod.brownian_increments(1, 1, 5, 3, 0.1)
    assert not np.array_equal(a, b)
    np.testing.assert_array_equal(a, rngmod.brownian_increments(1, 0, 5, 3, 0.1))
