"""Shared small configurations used by the tests and by tools/measure_fixtures.py."""

import math

import numpy as np

from anspde import rng as rngmod
from anspde.ldp import Control
from anspde.noise import DiffusionCoefficient, NoiseBasis, TimeProfile
from anspde.nonlinear_ops import DriftParams
from anspde.solver import SolverConfig
from anspde.spectral_field import Grid, VectorField, random_divfree_field

TWO_PI = 2 * math.pi


def small_grid(n=8):
    return Grid.cube(n, TWO_PI)


def initial_field(grid, seed=11, decay=4.0, amplitude=1.0, mask=None):
    u = random_divfree_field(grid, decay, amplitude, rngmod.stream(seed, "initial", 0))
    if mask is not None:
        u = VectorField(u.coeffs * mask, grid, True)
    return u


def multiplicative_coef(grid, n_modes=8, gradient=True, time=TimeProfile(0.2, 1.0)):
    basis = NoiseBasis(grid, n_modes)
    s2 = 0.05 if gradient else None
    return DiffusionCoefficient.example1(basis, 0.5, 0.1, s2, s2, "q", time)


def desk_config(grid=None, dt=0.01, T=0.2, epsilon=1.0, seed=5, store_every=1, drift=DriftParams()):
    grid = grid or small_grid()
    return SolverConfig(drift=drift, grid=grid, dt=dt, T=T, epsilon=epsilon, seed=seed, store_every=store_every)


def rate_setup():
    """Target generated by a known 4-interval, 4-mode control."""
    grid = small_grid()
    cfg = desk_config(grid, dt=0.02, T=0.4)
    coef = multiplicative_coef(grid, n_modes=4, gradient=False)
    u0 = initial_field(grid, mask=cfg.mask)
    g = rngmod.stream(3, "control", 1)
    phi_star = Control(np.linspace(0.0, cfg.T, 5), g.uniform(0.5, 1.5, (4, 4)) * g.choice([-1.0, 1.0], (4, 4)))
    candidates = [phi_star.scaled(s) for s in (0.8, 0.9, 1.0, 1.1)]
    return cfg, coef, u0, phi_star, candidates


def rate_tolerance(target, cfg, coef, u0):
    """Tube radius: 10% of the Y distance between the target and the uncontrolled skeleton."""
    from anspde.ldp import y_distances
    from anspde.solver import run_skeleton

    free = run_skeleton(cfg, u0, coef, Control.zero(cfg.T, coef.n_modes))
    return 0.1 * float(y_distances(target, free)[0])


def weak_convergence_setup():
    """Nonlinear desk run for the small-noise experiment (no gradient noise)."""
    grid = small_grid()
    cfg = desk_config(grid)
    coef = multiplicative_coef(grid, gradient=False)
    u0 = initial_field(grid, mask=cfg.mask)
    phi = Control(np.array([0.0, 0.1, 0.2]), np.eye(2, coef.n_modes))
    return cfg, coef, u0, phi
