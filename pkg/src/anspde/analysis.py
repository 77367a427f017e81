"""Energy ledgers, Monte Carlo moments, the inequality suite and the appendix utilities."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid

from . import rng as rngmod
from .nonlinear_ops import (
    DriftParams,
    InequalityParams,
    bound_ratio_B,
    d3B_bound_rhs,
    d3B_pairing,
    gn_slice_ratio,
    required_c_eta,
    young_triple_bound,
)
from .solver import LEDGER_TERMS, _factor, _step, ledger_step, run_ensemble
from .spectral_field import Grid, derivative_array, pad_spectrum, random_divfree_field, to_physical_array


# -- statistics ------------------------------------------------------------------
def jackknife(values, stat=None):
    """Jackknife estimate and standard error of ``stat`` (default: the mean).

    Returns:
        (estimate, stderr) with ``estimate`` the statistic on the full sample.
    """
    x = np.asarray(values, dtype=float)
    n = x.shape[0]
    if n < 2:
        raise ValueError("need at least two samples")
    if stat is None:
        est = math.fsum(x) / n
        loo = (math.fsum(x) - x) / (n - 1)
    else:
        est = float(stat(x))
        loo = np.array([stat(np.delete(x, i, axis=0)) for i in range(n)])
    m = loo.mean()
    se = math.sqrt((n - 1) / n * math.fsum((loo - m) ** 2))
    return float(est), se


# -- energy ledger -------------------------------------------------------------------
@dataclass
class EnergyLedger:
    """Per-step integrated terms of the energy identity for ||u||_{0,1}^2.

    ``terms[name]`` has shape (M, n_steps); the names are ``observed``
    (the change of ||u||_{0,1}^2), ``viscous``, ``damping``,
    ``vertical_damping``, ``convective_d3``, ``martingale``, ``ito``,
    ``control`` and ``residual`` = observed - sum of the others.
    """

    times: np.ndarray
    terms: dict
    initial: np.ndarray

    def cumulative(self, name):
        return np.cumsum(self.terms[name], axis=1)

    def total(self, name):
        return np.array([math.fsum(row) for row in self.terms[name]])

    def predicted_energy(self, include_martingale=False):
        """||u0||^2 plus the integrated non-martingale terms at the final time, per member."""
        keys = [k for k in LEDGER_TERMS[1:-1] if include_martingale or k != "martingale"]
        return self.initial + sum(self.total(k) for k in keys)

    def final_energy(self):
        return self.initial + self.total("observed")

    def dissipative_nonpositive(self):
        return bool(np.all(self.terms["viscous"] <= 0) and np.all(self.terms["damping"] <= 0))


def energy_ledger(traj, cfg, coef, control=None):
    """Ledger of a trajectory, from the in-loop record or recomputed from stored states.

    Recomputation needs every step stored and, for noisy runs, the increments.
    """
    initial = traj.norms["h01"][:, 0] ** 2
    if traj.ledger is not None:
        return EnergyLedger(traj.times, traj.ledger, initial)
    if traj.store_stride != 1:
        raise ValueError("trajectory lacks a ledger and does not store every step")
    noisy = cfg.epsilon > 0 and coef is not None and not coef.is_zero
    if noisy and traj.increments is None:
        raise ValueError("trajectory has no stored increments")
    from .solver import _control_value, _null_coef

    coef = coef if coef is not None else _null_coef(cfg)
    U = traj.all_coeffs()
    E = _factor(cfg)
    terms = {k: np.empty((traj.size, len(traj.times) - 1)) for k in LEDGER_TERMS}
    for j in range(len(traj.times) - 1):
        t = traj.times[j]
        phi_t = _control_value(control, t, coef.n_modes)
        dW = traj.increments[:, j] if noisy else None
        r = _step(U[:, j], t, cfg, coef, dW, phi_t, E)
        r.u = U[:, j + 1]
        for k, v in ledger_step(U[:, j], r, t, cfg, coef, phi_t, E).items():
            terms[k][:, j] = v
    return EnergyLedger(traj.times, terms, initial)


def residual_order(dts, residuals):
    """Least-squares slope of log|residual| against log(dt)."""
    return float(np.polyfit(np.log(dts), np.log(np.abs(residuals)), 1)[0])


# -- moments ---------------------------------------------------------------------
@dataclass
class MomentReport:
    """Monte Carlo estimates of the solution-space moments for one configuration."""

    M: int
    galerkin_cutoff: int | None
    sup_h01_4: float
    sup_h01_4_se: float
    int_h11_sq_2: float
    int_h11_sq_2_se: float
    int_l2a2: float
    int_l2a2_se: float
    initial_h01_4: float
    config_hash: str = ""

    def rows(self):
        base = {"n": self.galerkin_cutoff, "M": self.M, "config_hash": self.config_hash}
        return [
            dict(base, metric="E_sup_h01_4", estimate=self.sup_h01_4, stderr=self.sup_h01_4_se),
            dict(base, metric="E_int_h11_sq_squared", estimate=self.int_h11_sq_2, stderr=self.int_h11_sq_2_se),
            dict(base, metric="E_int_l2a2_power", estimate=self.int_l2a2, stderr=self.int_l2a2_se),
            dict(base, metric="bound_context_1_plus_E_u0_h01_4", estimate=1.0 + self.initial_h01_4, stderr=0.0),
        ]


def moments_from_trajectory(traj, alpha, galerkin_cutoff=None):
    h01 = traj.norms["h01"]
    p = 2 * alpha + 2
    sup4 = np.max(h01, axis=1) ** 4
    ih11 = trapezoid(traj.norms["h11"] ** 2, traj.times, axis=1) ** 2
    il = trapezoid(traj.norms["l2a2"] ** p, traj.times, axis=1)
    a, ase = jackknife(sup4)
    b, bse = jackknife(ih11)
    c, cse = jackknife(il)
    return MomentReport(traj.size, galerkin_cutoff, a, ase, b, bse, c, cse, float(np.mean(h01[:, 0] ** 4)))


def moment_estimator(cfgs, M, u0, coef, workers=1):
    """MomentReport per configuration (typically differing in the Galerkin cutoff).

    ``u0`` is a field or a callable ``cfg -> field`` so each cutoff can
    receive its own projection.
    """
    if M < 30:
        raise ValueError("moment estimation needs M >= 30")
    out = []
    for cfg in cfgs:
        x0 = u0(cfg) if callable(u0) else u0
        tr = run_ensemble(replace(cfg, store_every=cfg.n_steps), x0, coef, M, workers=workers)
        out.append(moments_from_trajectory(tr, cfg.drift.alpha, cfg.galerkin_cutoff))
    return out


# -- inequality suite ------------------------------------------------------------
@dataclass(frozen=True)
class EnsembleSpec:
    """Seeded ensemble of random divergence-free fields for the inequality suite."""

    n_samples: int = 200
    resolution: int = 32
    seed: int = 0
    decay_exponent: float = 4.5
    amplitude: float = 1.0
    alpha: float = 1.5
    drift: DriftParams = DriftParams(nu=1.0, a=1.0, alpha=1.5)
    params: InequalityParams = InequalityParams(eta=0.5, eps0=0.5, eps1=0.5, kappa=0.125, nu=1.0)
    length: float = 2 * math.pi

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("empty ensemble")


LEMMAS = ("maj_B", "gn_2d", "delta_3_B", "fgh", "upper_F_diff")


def _sample_fields(spec, i):
    g = Grid.cube(spec.resolution, spec.length)
    # one stream per field keeps the samples nested across resolutions
    return [random_divfree_field(g, spec.decay_exponent, spec.amplitude, rngmod.stream(spec.seed, "inequality", i, j)) for j in range(3)]


def _fgh_triple(u, v, w, alpha):
    """Scalar triple (|u|, d3 v_1, d1 w_1) on the oversampled grid."""
    g = u.grid
    fine = g.oversampled(2)
    up = to_physical_array(pad_spectrum(u.coeffs, g, fine), fine)
    f = np.sqrt(np.einsum("c...,c...->...", up, up))
    gg = to_physical_array(pad_spectrum(derivative_array(v.coeffs, g, 3), g, fine), fine)[0]
    h = to_physical_array(pad_spectrum(derivative_array(w.coeffs, g, 1), g, fine), fine)[0]
    return f, gg, h, fine.volume / fine.npts


def evaluate_sample(spec, i):
    """Rows (lemma_id, sample_id, lhs, rhs, ratio) for ensemble sample ``i``."""
    u, v, w = _sample_fields(spec, i)
    q = spec.params
    a = spec.alpha
    rows = []
    r = bound_ratio_B(u, v, w)
    rows.append(("maj_B", i, r, 1.0, r))
    r = gn_slice_ratio(u)
    rows.append(("gn_2d", i, r, 1.0, r))
    lhs = abs(d3B_pairing(u))
    rhs = d3B_bound_rhs(u, q, a)
    rows.append(("delta_3_B", i, lhs, rhs, lhs / rhs if rhs > 0 else float("nan")))
    f, gg, h, cell = _fgh_triple(u, v, w, a)
    lhs, rhs = young_triple_bound(f, gg, h, a, q.eps0, q.eps1, q.c_alpha, cell)
    rows.append(("fgh", i, lhs, rhs, lhs / rhs if rhs > 0 else float("nan")))
    ce = required_c_eta(u, v, spec.drift, q)
    rows.append(("upper_F_diff", i, ce, 1.0, ce))
    return rows


@dataclass
class InequalityReport:
    rows: list
    resolution: int
    seed: int
    maxima: dict = field(default_factory=dict)
    degenerate: dict = field(default_factory=dict)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["lemma_id", "sample_id", "lhs", "rhs", "ratio", "N", "seed"])
        for lemma, sid, lhs, rhs, ratio in self.rows:
            w.writerow([lemma, sid, repr(float(lhs)), repr(float(rhs)), repr(float(ratio)), self.resolution, self.seed])
        return buf.getvalue()

    def passes(self, constants):
        """Per-lemma check that the maximum ratio does not exceed the frozen constant."""
        return {k: bool(self.maxima[k] <= constants[k]) for k in constants if k in self.maxima}


def inequality_suite(spec, workers=1):
    """Evaluate every estimate over the seeded ensemble.

    Degenerate samples (NaN ratios) are excluded from the maxima and counted.
    Per-sample statistics: the ratio lhs / rhs for the two-sided estimates,
    the constant-free ratio for the B and Gagliardo-Nirenberg bounds, and
    the smallest admissible C_eta for the uniqueness estimate.
    """
    idx = range(spec.n_samples)
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(evaluate_sample, [spec] * spec.n_samples, idx))
    else:
        parts = [evaluate_sample(spec, i) for i in idx]
    rows = [r for p in parts for r in p]
    rep = InequalityReport(rows, spec.resolution, spec.seed)
    for lemma in LEMMAS:
        vals = np.array([r[4] for r in rows if r[0] == lemma], dtype=float)
        ok = vals[np.isfinite(vals)]
        rep.degenerate[lemma] = int(vals.size - ok.size)
        rep.maxima[lemma] = float(ok.max()) if ok.size else float("nan")
    return rep


# -- Gronwall extension -------------------------------------------------------------
@dataclass
class GronwallResult:
    bound: np.ndarray
    lhs: np.ndarray
    holds: bool | None
    hypotheses: dict


def gronwall_bound(times, X, Y, I, phi, Z, C, kappa, beta, gamma, Ctilde, rtol=1e-9):
    """Check the hypotheses of the stochastic Gronwall extension and evaluate its bound.

    Args:
        times: time grid, shape (n_t,).
        X, Y, I, phi: sample paths, shape (M, n_t), all nonnegative.
        Z: initial variable, shape (M,).
        C, kappa, beta, gamma, Ctilde: the constants of the hypotheses.

    Returns:
        GronwallResult with bound(t) = 2 exp(C + 2 t gamma e^C) (E Z + Ctilde),
        lhs(t) = E[X(t) + kappa Y(t)], per-hypothesis flags, and ``holds``
        (None when a hypothesis fails, so the bound is not asserted).
    """
    X, Y, I, phi = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (X, Y, I, phi))
    Z = np.asarray(Z, dtype=float)
    t = np.asarray(times, dtype=float)
    hyp = {}
    hyp["nonnegative"] = bool(min(X.min(), Y.min(), I.min(), phi.min(), Z.min()) >= 0 and min(C, kappa, beta, gamma) >= 0)
    hyp["phi_integral"] = bool(np.all(trapezoid(phi, t, axis=1) <= C * (1 + rtol)))
    hyp["beta_small"] = bool(2 * beta * math.exp(C) <= 1 + rtol)
    hyp["I_nondecreasing"] = bool(np.all(np.diff(I, axis=1) >= -rtol * max(1.0, np.abs(I).max())))
    integ = cumulative_trapezoid(phi * X, t, axis=1, initial=0.0)
    lhs_path = X + kappa * Y
    rhs_path = Z[:, None] + integ + I
    hyp["pathwise"] = bool(np.all(lhs_path <= rhs_path + rtol * np.maximum(1.0, np.abs(rhs_path))))
    EX = X.mean(axis=0)
    hyp["expectation_I"] = bool(
        np.all(I.mean(axis=0) <= beta * EX + gamma * cumulative_trapezoid(EX, t, initial=0.0) + Ctilde + rtol * max(1.0, Ctilde))
    )
    bound = 2 * np.exp(C + 2 * t * gamma * math.exp(C)) * (Z.mean() + Ctilde)
    lhs = lhs_path.mean(axis=0)
    holds = bool(np.all(lhs <= bound)) if all(hyp.values()) else None
    return GronwallResult(bound, lhs, holds, hyp)


# -- time increments -----------------------------------------------------------------
def dyadic_right_endpoint(s, T, n):
    """s_bar_n = (k + 1) T 2^-n for s in [k T 2^-n, (k + 1) T 2^-n)."""
    h = T * 2.0**-n
    k = np.floor(np.asarray(s) / h + 1e-9)
    return np.minimum((k + 1) * h, T)


def time_increment_stat(traj, n_dyadic, alpha, N_cutoff=None):
    """Monte Carlo estimate of I_n with its jackknife standard error.

    The outer time integral runs over the stored states; the inner window
    integral uses the per-step norm series.  ``N_cutoff`` defaults to ten
    times the ensemble median of the capped quantity.

    Returns:
        (estimate, stderr, fraction of paths in the cap event).
    """
    T = traj.times[-1]
    st = traj.store_times
    h = T * 2.0**-n_dyadic
    stride_t = st[1] - st[0]
    if stride_t > h * (1 + 1e-9) or not np.isclose(h / stride_t, round(h / stride_t)):
        raise ValueError("stored states do not resolve the dyadic grid")
    p = 2 * alpha + 2
    tt = traj.times
    dens = traj.norms["gradh"] ** 2 + traj.norms["l2a2"] ** p
    cum = cumulative_trapezoid(dens, tt, axis=1, initial=0.0)
    U = traj.all_coeffs()
    g = traj.grid
    sbar = dyadic_right_endpoint(st[:-1], T, n_dyadic)
    jbar = np.rint(sbar / stride_t).astype(int)
    js = np.arange(len(st) - 1)
    from .spectral_field import sq_norm_array

    inc = sq_norm_array(U[:, js] - U[:, jbar], g)  # (M, n_s)
    step_idx = np.rint(st / (tt[1] - tt[0])).astype(int)
    win = cum[:, step_idx[jbar]] - cum[:, step_idx[js]]
    integrand = inc + win
    vals = stride_t * np.sum(integrand, axis=1)
    cap_q = np.maximum.reduce(
        [
            np.max(traj.norms["l2"] ** 2, axis=1),
            trapezoid(traj.norms["h11"] ** 2, tt, axis=1),
            trapezoid(traj.norms["l2a2"] ** p, tt, axis=1),
        ]
    )
    N = 10.0 * float(np.median(cap_q)) if N_cutoff is None else N_cutoff
    ind = cap_q <= N
    est, se = jackknife(vals * ind) if vals.size > 1 else (float(vals[0] * ind[0]), 0.0)
    return est, se, float(ind.mean())


def fit_rate(ns, values):
    """Exponent r in values ~ (2^-n)^r by least squares on log2."""
    return float(-np.polyfit(np.asarray(ns, dtype=float), np.log2(values), 1)[0])
