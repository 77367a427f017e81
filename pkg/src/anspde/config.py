"""Run configuration: JSON parsing, canonical hashing and object construction."""

from __future__ import annotations

import hashlib
import json
import math

import numpy as np

from . import rng as rngmod
from .noise import DiffusionCoefficient, NoiseBasis, TimeProfile
from .nonlinear_ops import DriftParams, InequalityParams
from .solver import SolverConfig
from .spectral_field import (
    Grid,
    VectorField,
    leray_array,
    random_divfree_field,
    read_snapshot,
    to_spectral_array,
)


class ConfigError(ValueError):
    """Invalid or incomplete run configuration."""


TOP_KEYS = {"grid", "drift", "noise", "solver", "initial", "output", "seed", "verify", "moments", "skeleton", "ldp", "couple", "energy_audit"}


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def config_hash(cfg):
    return hashlib.sha256(canonical_json(cfg).encode("utf-8")).hexdigest()


def load(path):
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    validate(cfg)
    return cfg


def validate(cfg):
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    # keys starting with "_" are free-form annotations
    unknown = {k for k in cfg if not k.startswith("_")} - TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    build_grid(cfg)
    build_drift(cfg)
    build_solver(cfg)
    build_noise(cfg)


def _triple(x, cast):
    if isinstance(x, (list, tuple)):
        if len(x) != 3:
            raise ConfigError("expected three entries")
        return tuple(cast(v) for v in x)
    return (cast(x),) * 3


def build_grid(cfg):
    g = cfg.get("grid", {})
    try:
        return Grid(_triple(g.get("L", 2 * math.pi), float), _triple(g.get("N", 16), int), float(g.get("dealias_fraction", 2.0 / 3.0)))
    except ValueError as e:
        raise ConfigError(f"grid: {e}") from e


def build_drift(cfg):
    d = cfg.get("drift", {})
    try:
        return DriftParams(
            nu=float(d.get("nu", 1.0)),
            a=float(d.get("a", 1.0)),
            alpha=float(d.get("alpha", 1.5)),
            viscous=bool(d.get("viscous", True)),
            convective=bool(d.get("convective", True)),
            damping=bool(d.get("damping", True)),
        )
    except ValueError as e:
        raise ConfigError(f"drift: {e}") from e


def build_solver(cfg, seed=None):
    s = cfg.get("solver", {})
    try:
        return SolverConfig(
            drift=build_drift(cfg),
            grid=build_grid(cfg),
            galerkin_cutoff=s.get("galerkin_cutoff"),
            noise_cutoff=s.get("noise_cutoff"),
            dt=float(s.get("dt", 1e-2)),
            T=float(s.get("T", 1.0)),
            epsilon=float(s.get("epsilon", 1.0)),
            seed=int(cfg.get("seed", 0) if seed is None else seed),
            scheme=s.get("scheme", "em_integrating_factor"),
            store_every=int(s.get("store_every", 1)),
            record_ledger=bool(s.get("record_ledger", False)),
        )
    except ValueError as e:
        raise ConfigError(f"solver: {e}") from e


def build_noise(cfg, grid=None):
    n = cfg.get("noise", {})
    grid = grid or build_grid(cfg)
    try:
        basis = NoiseBasis(grid, int(n.get("n_W", 8)), float(n.get("q0", 1.0)), float(n.get("r", 2.0)))
        tp = n.get("time", {})
        time = TimeProfile(float(tp.get("amplitude", 0.0)), float(tp.get("frequency", 0.0)))
        family = n.get("family", "example1")
        if family != "example1":
            raise ConfigError("only the example1 family can be configured from JSON; build example2 in Python")
        return DiffusionCoefficient.example1(
            basis,
            float(n.get("sigma0_amplitude", 1.0)),
            n.get("sigma1"),
            n.get("sigma2"),
            n.get("sigma2t"),
            n.get("weights", "q"),
            time,
        )
    except ValueError as e:
        raise ConfigError(f"noise: {e}") from e


def build_inequality_params(cfg):
    v = cfg.get("verify", {})
    d = build_drift(cfg)
    try:
        return InequalityParams(
            eta=float(v.get("eta", 0.5 * d.nu)),
            c_eta=float(v.get("c_eta", 1.0)),
            eps0=float(v.get("eps0", 0.5)),
            eps1=float(v.get("eps1", 0.5)),
            c_alpha=float(v.get("c_alpha", 1.0)),
            kappa=float(v.get("kappa", 2.0 ** (-2 * d.alpha))),
            nu=d.nu,
        )
    except ValueError as e:
        raise ConfigError(f"verify: {e}") from e


def build_initial(cfg, grid, seed, mask=None):
    """Initial field from the ``initial`` section, projected onto ``mask`` when given."""
    spec = cfg.get("initial", {"type": "random"})
    kind = spec.get("type", "random")
    if kind == "zero":
        u = VectorField.zeros(grid)
    elif kind == "random":
        r = rngmod.stream(seed, "initial", int(spec.get("seed_index", 0)))
        u = random_divfree_field(grid, float(spec.get("decay", 4.0)), float(spec.get("amplitude", 1.0)), r)
    elif kind == "single_mode":
        m = [int(x) for x in spec["mode"]]
        pol = np.asarray(spec.get("polarization", [0.0, 1.0, 0.0]), dtype=float)
        amp = float(spec.get("amplitude", 1.0))
        x = grid.coordinates()
        k = [2 * math.pi * m[i] / grid.box_lengths[i] for i in range(3)]
        phase = k[0] * x[0] + k[1] * x[1] + k[2] * x[2]
        samples = amp * pol[:, None, None, None] * np.cos(phase)[None]
        u = VectorField(leray_array(to_spectral_array(samples, grid), grid), grid, True)
    elif kind == "snapshot":
        u = read_snapshot(spec["path"], grid.dealias_fraction)
        if u.grid != grid:
            raise ConfigError("snapshot grid differs from configured grid")
    else:
        raise ConfigError(f"unknown initial type {kind!r}")
    if mask is not None:
        u = VectorField(u.coeffs * mask, grid, True)
    return u
