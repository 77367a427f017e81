"""Time integration of the Galerkin system, its controlled variant and the skeleton.

All internal arrays carry a leading ensemble axis so that many trajectories
advance together; a single run is an ensemble of size one.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from . import rng as rngmod
from .noise import DiffusionCoefficient, apply_sigma_array
from .nonlinear_ops import DriftParams, convective_array, damping_array
from .spectral_field import (
    Grid,
    VectorField,
    derivative_array,
    norm_series,
    pad_spectrum,
    pairing_array,
    sq_norm_array,
    to_physical_array,
)

SCHEMES = ("em_integrating_factor", "em_plain")
CHUNK = 50
LEDGER_TERMS = (
    "observed",
    "viscous",
    "damping",
    "vertical_damping",
    "convective_d3",
    "martingale",
    "ito",
    "control",
    "residual",
)


class BlowUpError(FloatingPointError):
    """A state became non-finite during time stepping."""


@dataclass(frozen=True)
class SolverConfig:
    """Physical, discretisation and noise parameters of one run.

    ``galerkin_cutoff`` n keeps the modes with |m|^2 <= n inside the
    dealias box (None keeps the whole dealiased box).  ``noise_cutoff``
    keeps the first noise basis modes (None keeps all).
    """

    drift: DriftParams = DriftParams()
    grid: Grid = Grid()
    galerkin_cutoff: int | None = None
    noise_cutoff: int | None = None
    dt: float = 1e-2
    T: float = 1.0
    epsilon: float = 1.0
    seed: int = 0
    scheme: str = "em_integrating_factor"
    store_every: int = 1
    record_ledger: bool = False

    def __post_init__(self):
        if not self.dt > 0 or not self.T > 0:
            raise ValueError("dt and T must be positive")
        if self.dt >= self.T:
            raise ValueError("dt must be smaller than T")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.store_every < 1:
            raise ValueError("store_every must be positive")
        if self.galerkin_cutoff is not None:
            n = int(self.galerkin_cutoff)
            if n < 1:
                raise ValueError("galerkin_cutoff must be positive")
            if math.isqrt(n) > min(self.grid.dealias_limits):
                raise ValueError("galerkin_cutoff exceeds the dealiased grid")
        if self.noise_cutoff is not None and self.noise_cutoff < 0:
            raise ValueError("noise_cutoff must be nonnegative")

    @property
    def n_steps(self):
        return int(round(self.T / self.dt))

    @cached_property
    def mask(self):
        return self.grid.shell_mask(self.galerkin_cutoff)


@dataclass
class Trajectory:
    """Time series of an ensemble of runs.

    Attributes:
        times: all step times, shape (n_steps + 1,).
        store_times: times of the stored states.
        active: flat indices of the retained (Galerkin) modes.
        states: active-mode coefficients, shape (M, n_store, 3, n_active).
        norms: dict of per-step norm series, each (M, n_steps + 1); keys
            h01, h11, gradh, l2, h10, l2a2 (L^{2 alpha + 2} norm).
        increments: Brownian increments, shape (M, n_steps, n_W), or None.
        ledger: dict of per-step ledger terms, each (M, n_steps), or None.
    """

    times: np.ndarray
    store_times: np.ndarray
    grid: Grid
    active: np.ndarray
    states: np.ndarray
    norms: dict
    increments: np.ndarray | None = None
    ledger: dict | None = None
    diagnostics: dict = field(default_factory=dict)
    members: np.ndarray | None = None

    @property
    def size(self):
        return self.states.shape[0]

    @property
    def store_stride(self):
        if len(self.store_times) < 2:
            return len(self.times) - 1
        return int(round((self.store_times[1] - self.store_times[0]) / (self.times[1] - self.times[0])))

    def coeffs(self, j, member=0):
        """Full spectral coefficients of stored state ``j``."""
        out = np.zeros((3, int(np.prod(self.grid.spectral_shape))), dtype=complex)
        out[:, self.active] = self.states[member, j]
        return out.reshape((3,) + self.grid.spectral_shape)

    def all_coeffs(self, member=None):
        """Stored states as full spectra, shape (M, n_store, 3, spec) or (n_store, 3, spec)."""
        s = self.states if member is None else self.states[member : member + 1]
        out = np.zeros(s.shape[:-1] + (int(np.prod(self.grid.spectral_shape)),), dtype=complex)
        out[..., self.active] = s
        out = out.reshape(s.shape[:-1] + self.grid.spectral_shape)
        return out if member is None else out[0]

    def state(self, j, member=0):
        return VectorField(self.coeffs(j, member), self.grid, True)

    def final_state(self, member=0):
        if not np.isclose(self.store_times[-1], self.times[-1]):
            raise ValueError("final state was not stored")
        return self.state(len(self.store_times) - 1, member)

    def member(self, i):
        """Single-member view as a Trajectory of size one."""
        sl = slice(i, i + 1)
        return Trajectory(
            self.times,
            self.store_times,
            self.grid,
            self.active,
            self.states[sl],
            {k: v[sl] for k, v in self.norms.items()},
            None if self.increments is None else self.increments[sl],
            None if self.ledger is None else {k: v[sl] for k, v in self.ledger.items()},
            dict(self.diagnostics),
            None if self.members is None else self.members[sl],
        )

    @staticmethod
    def concatenate(parts):
        first = parts[0]
        cat = lambda xs: np.concatenate(xs, axis=0)  # noqa: E731
        diag = {}
        for p in parts:
            for k, v in p.diagnostics.items():
                diag[k] = max(diag.get(k, v), v)
        return Trajectory(
            first.times,
            first.store_times,
            first.grid,
            first.active,
            cat([p.states for p in parts]),
            {k: cat([p.norms[k] for p in parts]) for k in first.norms},
            None if first.increments is None else cat([p.increments for p in parts]),
            None if first.ledger is None else {k: cat([p.ledger[k] for p in parts]) for k in first.ledger},
            diag,
            None if first.members is None else cat([p.members for p in parts]),
        )


# -- helpers --------------------------------------------------------------------
def project_galerkin(coeffs, cfg):
    """P_n: keep the Galerkin modes (coefficients assumed divergence-free)."""
    return coeffs * cfg.mask


def _noise_xi(dW, coef, cfg):
    if cfg.noise_cutoff is None or cfg.noise_cutoff >= coef.n_modes:
        return dW
    xi = np.array(dW, copy=True)
    xi[..., cfg.noise_cutoff :] = 0.0
    return xi


def _control_value(phi, t, n):
    if phi is None:
        return None
    v = np.asarray(phi.value(t) if hasattr(phi, "value") else phi(t), dtype=float)
    if v.shape[-1] != n:
        raise ValueError(f"control has {v.shape[-1]} coordinates, noise has {n}")
    return v


def _ito_base(coef, cfg, t, u):
    """|P_n sigma(t, u) Pi_n|^2 in L-tilde for each member."""
    g = cfg.grid
    n = coef.n_modes
    keep = n if cfg.noise_cutoff is None else min(n, cfg.noise_cutoff)
    if keep == 0 or coef.is_zero:
        return np.zeros(u.shape[0])
    eye = np.eye(n)[:keep]
    w = 1.0 + g.k3_squared
    if coef.is_additive:
        s = apply_sigma_array(t, np.zeros((1, 3) + g.spectral_shape, dtype=complex), eye, coef) * cfg.mask
        return np.full(u.shape[0], float(np.sum(sq_norm_array(s, g, w))))
    s = apply_sigma_array(t, u[:, None], eye[None], coef) * cfg.mask
    return np.sum(sq_norm_array(s, g, w), axis=1)


def _power_integrals(u, grid, p):
    fine = grid.oversampled(2)
    up = to_physical_array(pad_spectrum(u, grid, fine), fine)
    r2 = np.einsum("bc...,bc...->b...", up, up)
    return fine.volume / fine.npts * np.sum(r2 ** (p / 2), axis=(-3, -2, -1)), float(np.sqrt(r2.max()))


# -- one step -------------------------------------------------------------------------
@dataclass
class StepResult:
    u: np.ndarray
    drift: np.ndarray
    noise: np.ndarray | None
    control: np.ndarray | None
    convective: np.ndarray | None
    damping: np.ndarray | None
    power: np.ndarray


def _step(u, t, cfg, coef, dW, phi_t, E):
    p = cfg.drift
    g = cfg.grid
    mask = cfg.mask
    nl = np.zeros_like(u)
    conv = damp = None
    pw = np.zeros(u.shape[0])
    if p.convective:
        conv = convective_array(u, u, g) * mask
        nl -= conv
    if p.damping:
        damp, pw = damping_array(u, g, p.alpha)
        damp *= mask
        nl -= p.a * damp
    if cfg.scheme == "em_plain" and p.viscous:
        nl -= p.nu * g.kh_squared * u
    noise = ctrl = None
    incr = cfg.dt * nl
    if dW is not None and cfg.epsilon > 0 and not coef.is_zero:
        noise = math.sqrt(cfg.epsilon) * apply_sigma_array(t, u, _noise_xi(dW, coef, cfg), coef) * mask
        incr = incr + noise
    if phi_t is not None and coef is not None and not coef.is_zero:
        ctrl = cfg.dt * apply_sigma_array(t, u, _noise_xi(np.broadcast_to(phi_t, u.shape[:1] + phi_t.shape[-1:]), coef, cfg), coef) * mask
        incr = incr + ctrl
    new = u + incr
    if E is not None:
        new = E * new
    return StepResult(new * mask, nl, noise, ctrl, conv, damp, pw)


def step(state, t, cfg, coef, dW=None, control=None):
    """Advance one field by one Euler-Maruyama step.

    Args:
        state: VectorField in the Galerkin space.
        t: current time.
        cfg: SolverConfig.
        coef: DiffusionCoefficient (or None for a noiseless, uncontrolled step).
        dW: Brownian increments of the noise modes (None for no noise).
        control: object with ``value(t)`` returning H_0 coordinates, or None.
    """
    E = _factor(cfg)
    if coef is None:
        coef = _null_coef(cfg)
    phi_t = _control_value(control, t, coef.n_modes)
    dW = None if dW is None else np.asarray(dW, dtype=float)[None]
    r = _step(state.coeffs[None] * cfg.mask, t, cfg, coef, dW, phi_t, E)
    _check_finite(r.u, 0)
    return VectorField(r.u[0], cfg.grid, True)


def _factor(cfg):
    if cfg.scheme == "em_integrating_factor" and cfg.drift.viscous:
        return np.exp(-cfg.drift.nu * cfg.grid.kh_squared * cfg.dt)
    return None


def _null_coef(cfg):
    from .noise import NoiseBasis

    return DiffusionCoefficient.zero(NoiseBasis(cfg.grid, 1))


def _check_finite(u, j, norms=None):
    if not np.all(np.isfinite(u)):
        bad = "state"
        if norms is not None:
            for k, v in norms.items():
                if not np.all(np.isfinite(v)):
                    bad = k
                    break
        raise BlowUpError(f"non-finite {bad} after step {j}")


# -- ledger -------------------------------------------------------------------------------
def ledger_step(u, r, t, cfg, coef, phi_t, E):
    """Integrated energy-identity terms for one step from state ``u`` to ``r.u``."""
    g = cfg.grid
    p = cfg.drift
    w01 = 1.0 + g.k3_squared
    dt = cfg.dt
    e0 = sq_norm_array(u, g, w01)
    out = {"observed": sq_norm_array(r.u, g, w01) - e0}
    if p.viscous:
        if E is not None:
            out["viscous"] = sq_norm_array(E * u, g, w01) - e0
        else:
            out["viscous"] = -2 * p.nu * dt * sq_norm_array(u, g, g.kh_squared * w01)
    else:
        out["viscous"] = np.zeros_like(e0)
    k3sq = g.derivative_multipliers[2] ** 2
    if r.damping is not None:
        out["damping"] = -2 * p.a * dt * r.power
        out["vertical_damping"] = -2 * p.a * dt * pairing_array(r.damping, u, g, k3sq)
    else:
        out["damping"] = np.zeros_like(e0)
        out["vertical_damping"] = np.zeros_like(e0)
    if r.convective is not None:
        out["convective_d3"] = -2 * dt * pairing_array(r.convective, u, g, k3sq)
    else:
        out["convective_d3"] = np.zeros_like(e0)
    out["martingale"] = 2 * pairing_array(r.noise, u, g, w01) if r.noise is not None else np.zeros_like(e0)
    if cfg.epsilon > 0 and not coef.is_zero:
        out["ito"] = cfg.epsilon * dt * _ito_base(coef, cfg, t, u)
    else:
        out["ito"] = np.zeros_like(e0)
    out["control"] = 2 * pairing_array(r.control, u, g, w01) if r.control is not None else np.zeros_like(e0)
    out["residual"] = out["observed"] - sum(out[k] for k in LEDGER_TERMS[1:-1])
    return out


def vertical_damping_bound(u, cfg):
    """-2 a (2 alpha + 1) | |u|^alpha d3 u |^2 (per unit time), the coarser estimate of the vertical damping term."""
    g = cfg.grid
    p = cfg.drift
    fine = g.oversampled(2)
    up = to_physical_array(pad_spectrum(u, g, fine), fine)
    dp = to_physical_array(pad_spectrum(derivative_array(u, g, 3), g, fine), fine)
    r2 = np.einsum("bc...,bc...->b...", up, up)
    d2 = np.einsum("bc...,bc...->b...", dp, dp)
    return -2 * p.a * (2 * p.alpha + 1) * fine.volume / fine.npts * np.sum(r2**p.alpha * d2, axis=(-3, -2, -1))


# -- runs ---------------------------------------------------------------------------
def _norm_record(u, cfg, pw):
    g = cfg.grid
    s = norm_series(u, g)
    p = 2 * cfg.drift.alpha + 2
    if pw is None:
        pw, _ = _power_integrals(u, g, p)
    return {
        "l2": np.sqrt(s["l2"]),
        "gradh": np.sqrt(s["gradh"]),
        "h01": np.sqrt(s["l2"] + s["d3"]),
        "h10": np.sqrt(s["l2"] + s["gradh"]),
        "h11": np.sqrt(s["l2"] + s["d3"] + s["gradh"] + s["gradh_d3"]),
        "l2a2": np.asarray(pw) ** (1.0 / p),
    }


def _integrate(u0, cfg, coef, increments, control, members):
    """Advance a batch of initial states; returns a Trajectory."""
    # overflow surfaces as BlowUpError from the finiteness check
    with np.errstate(over="ignore", invalid="ignore"):
        return _integrate_batch(u0, cfg, coef, increments, control, members)


def _integrate_batch(u0, cfg, coef, increments, control, members):
    g = cfg.grid
    mask = cfg.mask
    active = np.flatnonzero(mask.ravel())
    n = cfg.n_steps
    E = _factor(cfg)
    u = u0 * mask
    M = u.shape[0]
    stride = cfg.store_every
    store_idx = list(range(0, n + 1, stride))
    if store_idx[-1] != n:
        store_idx.append(n)
    states = np.empty((M, len(store_idx), 3, active.size), dtype=complex)
    norms = {k: np.empty((M, n + 1)) for k in ("l2", "gradh", "h01", "h10", "h11", "l2a2")}
    ledger = {k: np.empty((M, n)) for k in LEDGER_TERMS} if cfg.record_ledger else None
    times = cfg.dt * np.arange(n + 1)
    si = 0
    cfl = 0.0
    p = cfg.drift

    def store(j, u, pw):
        nonlocal si
        for k, v in _norm_record(u, cfg, pw).items():
            norms[k][:, j] = v
        if si < len(store_idx) and store_idx[si] == j:
            states[:, si] = u.reshape(M, 3, -1)[:, :, active]
            si += 1

    for j in range(n):
        t = times[j]
        phi_t = _control_value(control, t, coef.n_modes)
        dW = None if increments is None else increments[:, j]
        r = _step(u, t, cfg, coef, dW, phi_t, E)
        store(j, u, r.power if p.damping else None)
        if p.damping and j % max(1, n // 10) == 0:
            prev = cfl
            cfl = max(cfl, p.a * dt_power_max(u, g, p.alpha) * cfg.dt)
            if cfl >= 0.5 > prev:
                warnings.warn(f"a max|u|^(2 alpha) dt = {cfl:.3g} exceeds 0.5; reduce dt", RuntimeWarning, stacklevel=4)
        if ledger is not None:
            for k, v in ledger_step(u, r, t, cfg, coef, phi_t, E).items():
                ledger[k][:, j] = v
        _check_finite(r.u, j + 1)
        u = r.u
    store(n, u, None)
    diag = {"damping_dt_number": cfl}
    return Trajectory(times, times[store_idx], g, active, states, norms, increments, ledger, diag, members)


def dt_power_max(u, grid, alpha):
    _, m = _power_integrals(u, grid, 2)
    with np.errstate(over="ignore"):
        return float(np.power(m, 2 * alpha))


def _as_batch(u0, M):
    c = u0.coeffs if isinstance(u0, VectorField) else np.asarray(u0)
    if c.ndim == 4:
        c = np.broadcast_to(c, (M,) + c.shape)
    if c.shape[0] != M:
        raise ValueError("initial data batch does not match ensemble size")
    return np.array(c, dtype=complex)


def run_galerkin(cfg, u0, coef, member=0, control=None):
    """Solve the Galerkin system from ``u0`` with noise path ``member`` of ``cfg.seed``."""
    return run_ensemble(cfg, u0, coef, 1, member_offset=member, control=control)


def _chunk_job(args):
    cfg, u0, coef, members, control = args
    inc = None
    if cfg.epsilon > 0 and not coef.is_zero:
        inc = np.stack([rngmod.brownian_increments(cfg.seed, m, cfg.n_steps, coef.n_modes, cfg.dt) for m in members])
    return _integrate(u0, cfg, coef, inc, control, np.asarray(members))


def run_ensemble(cfg, u0, coef, M, member_offset=0, control=None, workers=1):
    """Run ``M`` independent trajectories (noise paths member_offset .. member_offset + M - 1).

    Members are processed in fixed chunks, so results do not depend on
    ``workers``.  ``u0`` is a field (shared) or an array of shape (M, 3, spec).
    """
    if coef is None:
        coef = _null_coef(cfg)
    if coef.grid != cfg.grid:
        raise ValueError("noise grid and solver grid differ")
    u0 = _as_batch(u0, M)
    members = np.arange(member_offset, member_offset + M)
    jobs = [(cfg, u0[i : i + CHUNK], coef, members[i : i + CHUNK], control) for i in range(0, M, CHUNK)]
    if workers > 1 and len(jobs) > 1 and coef.pointwise is None:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_chunk_job, jobs))
    else:
        parts = [_chunk_job(j) for j in jobs]
    return parts[0] if len(parts) == 1 else Trajectory.concatenate(parts)


def run_skeleton(cfg, u0, coef, control):
    """Deterministic controlled equation du = F(u) dt + sigma(t, u) phi(t) dt."""
    return _integrate(_as_batch(u0, 1), replace(cfg, epsilon=0.0), coef, None, control, np.array([0]))


def run_deterministic(cfg, u0):
    return _integrate(_as_batch(u0, 1), replace(cfg, epsilon=0.0), _null_coef(cfg), None, None, np.array([0]))


# -- weak form -------------------------------------------------------------------------
def weak_form_residual(traj, v, t, cfg, coef, control=None, member=0):
    """Discrete weak-form defect at time ``t`` against the test field ``v``.

    (u(t), v) - (u0, v) - sum nu <u, Delta_h v> dt - sum <B(u, v), u> dt
    + a sum <|u|^{2 alpha} u, v> dt - sum (sigma dW, v) - sum (sigma phi, v) dt,
    with left-point sums over the solver steps.  Needs every step stored.
    """
    g = cfg.grid
    if traj.store_stride != 1:
        raise ValueError("weak_form_residual needs every step stored")
    j = int(round(t / cfg.dt))
    if j < 0 or j > len(traj.times) - 1 or not np.isclose(j * cfg.dt, t):
        raise ValueError("t is not a step time of the trajectory")
    if j == 0:
        return 0.0
    p = cfg.drift
    U = traj.all_coeffs(member)[: j + 1]
    vc = v.coeffs
    first = pairing_array(U[j], vc, g) - pairing_array(U[0], vc, g)
    Us = U[:j]
    total = first
    if p.viscous:
        total -= cfg.dt * p.nu * np.sum(pairing_array(Us, -g.kh_squared * vc, g))
    if p.convective:
        bv = convective_array(Us, np.broadcast_to(vc, Us.shape), g)
        total -= cfg.dt * np.sum(pairing_array(bv, Us, g))
    if p.damping:
        d, _ = damping_array(Us, g, p.alpha)
        total += cfg.dt * p.a * np.sum(pairing_array(d, vc, g))
    if coef is not None and not coef.is_zero:
        if cfg.epsilon > 0:
            if traj.increments is None:
                raise ValueError("trajectory has no stored increments")
            dW = _noise_xi(traj.increments[member, :j], coef, cfg)
            if coef.time.amplitude:
                s = np.stack([apply_sigma_array(traj.times[i], Us[i], dW[i], coef) for i in range(j)])
            else:
                s = apply_sigma_array(0.0, Us, dW, coef)
            total -= math.sqrt(cfg.epsilon) * np.sum(pairing_array(s * cfg.mask, vc, g))
        if control is not None:
            phis = np.stack([_control_value(control, traj.times[i], coef.n_modes) for i in range(j)])
            s = np.stack([apply_sigma_array(traj.times[i], Us[i], _noise_xi(phis[i], coef, cfg), coef) for i in range(j)])
            total -= cfg.dt * np.sum(pairing_array(s * cfg.mask, vc, g))
    return float(abs(total))


# -- coupled runs --------------------------------------------------------------------
@dataclass
class CoupledRuns:
    times: np.ndarray
    diff_l2: np.ndarray
    diff_gradh: np.ndarray
    sup_l2: float
    int_gradh2: float
    identical: bool
    a: Trajectory
    b: Trajectory


def couple_runs(cfg, u0_a, u0_b, coef, member=0):
    """Two runs driven by the same noise path; returns the difference series.

    The runs are integrated one after the other with identical increments,
    so equal initial data give bit-identical trajectories.
    """
    if u0_a.grid != cfg.grid or u0_b.grid != cfg.grid:
        raise ValueError("initial data and configuration grids differ")
    c = replace(cfg, store_every=1)
    ta = run_galerkin(c, u0_a, coef, member)
    tb = run_galerkin(c, u0_b, coef, member)
    D = ta.all_coeffs(0) - tb.all_coeffs(0)
    g = cfg.grid
    l2 = np.sqrt(sq_norm_array(D, g))
    gh = np.sqrt(sq_norm_array(D, g, g.kh_squared))
    return CoupledRuns(
        ta.store_times,
        l2,
        gh,
        float(l2.max()),
        float(cfg.dt * np.sum(gh[:-1] ** 2)),
        bool(np.array_equal(ta.states, tb.states)),
        ta,
        tb,
    )
