"""Controls, the Y norm, rate-function upper bounds and the small-noise experiments."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import trapezoid

from . import rng as rngmod
from .noise import condition_constants
from .solver import run_ensemble, run_skeleton
from .spectral_field import VectorField, sq_norm_array


class ConditionError(ValueError):
    """The diffusion coefficient is outside the regime an experiment requires."""


# -- controls -------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class Control:
    """Piecewise-constant H_0-valued control.

    ``coefficients[j]`` holds the H_0 coordinates on
    ``[breakpoints[j], breakpoints[j + 1])``.
    """

    breakpoints: np.ndarray
    coefficients: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.breakpoints, dtype=float)
        c = np.atleast_2d(np.asarray(self.coefficients, dtype=float))
        if b.ndim != 1 or b.size < 2 or np.any(np.diff(b) <= 0):
            raise ValueError("breakpoints must be strictly increasing with at least two entries")
        if c.shape[0] != b.size - 1:
            raise ValueError("need one coefficient vector per interval")
        b.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "breakpoints", b)
        object.__setattr__(self, "coefficients", c)

    @classmethod
    def zero(cls, T, n_modes, n_intervals=1):
        return cls(np.linspace(0.0, T, n_intervals + 1), np.zeros((n_intervals, n_modes)))

    @classmethod
    def constant(cls, T, coeffs):
        return cls(np.array([0.0, T]), np.asarray(coeffs, dtype=float)[None])

    @property
    def T(self):
        return float(self.breakpoints[-1])

    @property
    def n_modes(self):
        return self.coefficients.shape[1]

    @property
    def energy(self):
        """1/2 int |phi(s)|_0^2 ds."""
        return 0.5 * math.fsum(np.sum(self.coefficients**2, axis=1) * np.diff(self.breakpoints))

    def in_ball(self, M):
        """Membership in S_M: int |phi|_0^2 <= M."""
        return 2.0 * self.energy <= M * (1 + 1e-12)

    def value(self, t):
        b = self.breakpoints
        j = int(np.searchsorted(b, t + 1e-9 * (b[-1] - b[0]), side="right")) - 1
        return self.coefficients[min(max(j, 0), len(b) - 2)]

    def scaled(self, lam):
        return Control(self.breakpoints, lam * self.coefficients)

    def refined(self, k):
        """Split each interval into ``k`` equal pieces with unchanged values."""
        b = self.breakpoints
        nb = np.concatenate([np.linspace(b[j], b[j + 1], k + 1)[:-1] for j in range(len(b) - 1)] + [b[-1:]])
        return Control(nb, np.repeat(self.coefficients, k, axis=0))

    def to_json(self):
        return json.dumps({"breakpoints": self.breakpoints.tolist(), "coefficients": self.coefficients.tolist()}, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["breakpoints"], dtype=float), np.asarray(d["coefficients"], dtype=float))


def control_energy(phi):
    return phi.energy


def d1_distance(phi, psi, n_terms=48):
    """Weak-topology proxy sum_i 2^-i |int (phi - psi, e_i)_0 ds|.

    ``e_i`` runs over cosines in time times H_0 coordinate vectors, ordered by
    (time frequency + coordinate index) and truncated after ``n_terms``.
    """
    if phi.n_modes != psi.n_modes or not np.isclose(phi.T, psi.T):
        raise ValueError("controls live on different spaces")
    T = phi.T
    b = np.union1d(phi.breakpoints, psi.breakpoints)
    mids = 0.5 * (b[1:] + b[:-1])
    diff = np.stack([phi.value(m) - psi.value(m) for m in mids])  # (J, n)
    pairs = []
    s = 0
    while len(pairs) < n_terms:
        for j in range(s + 1):
            k = s - j
            if k < phi.n_modes:
                pairs.append((j, k))
        s += 1
    total = 0.0
    for i, (j, k) in enumerate(pairs[:n_terms], start=1):
        if j == 0:
            w = np.diff(b) / math.sqrt(T)
        else:
            w = math.sqrt(2.0 / T) * T / (j * math.pi) * (np.sin(j * math.pi * b[1:] / T) - np.sin(j * math.pi * b[:-1] / T))
        total += 2.0**-i * abs(float(np.dot(w, diff[:, k])))
    return total


# -- Y norm -----------------------------------------------------------------------
@dataclass(frozen=True)
class YNorm:
    sup_l2: float
    h10_l2: float

    @property
    def total(self):
        return self.sup_l2 + self.h10_l2


def _y_from_series(times, l2_sq, h10_sq):
    sup = np.sqrt(np.max(l2_sq, axis=-1))
    integ = np.sqrt(trapezoid(h10_sq, times, axis=-1))
    return sup, integ


def y_norm(traj, member=0):
    """sup_t |u|_{L^2} + (int ||u||_{1,0}^2 dt)^{1/2} from the per-step norm series."""
    sup, integ = _y_from_series(traj.times, traj.norms["l2"][member] ** 2, traj.norms["h10"][member] ** 2)
    return YNorm(float(sup), float(integ))


def y_distances(traj_a, traj_b):
    """Y distances between stored states, member-wise (``traj_b`` may have one member)."""
    if traj_a.grid != traj_b.grid or not np.array_equal(traj_a.store_times, traj_b.store_times):
        raise ValueError("trajectories are not comparable")
    g = traj_a.grid
    D = traj_a.all_coeffs() - traj_b.all_coeffs()
    l2 = sq_norm_array(D, g)
    h10 = l2 + sq_norm_array(D, g, g.kh_squared)
    sup, integ = _y_from_series(traj_a.store_times, l2, h10)
    return sup + integ


# -- rate function ------------------------------------------------------------------
@dataclass
class RateEstimate:
    value: float
    control: Control | None
    residual: float
    status: str
    n_feasible: int = 0
    history: list = field(default_factory=list)


def _distance_to_target(traj, target):
    if isinstance(target, VectorField):
        u = traj.final_state()
        return math.sqrt(float(sq_norm_array(u.coeffs - target.coeffs, u.grid)))
    return float(y_distances(traj, target)[0])


def rate_upper_bound(target, candidates, cfg, coef, u0, tol_Y, refine=False, refine_factors=(0.0, 0.5, 0.8, 0.95), sweeps=2):
    """Smallest control energy among candidates whose skeleton lands within ``tol_Y`` of ``target``.

    ``target`` is a Trajectory (compared in the Y norm over stored states) or
    a VectorField (compared with the final state in L^2).  The zero control
    is always tried.  With ``refine`` the best feasible control is improved
    by coordinate descent: each coefficient is scaled by the factors in
    ``refine_factors`` and the change is kept when the result stays feasible
    and has lower energy.
    """
    n = coef.n_modes
    cands = [Control.zero(cfg.T, n)] + list(candidates)
    best = None
    n_feasible = 0
    cache = {}

    def evaluate(c):
        key = (c.breakpoints.tobytes(), c.coefficients.tobytes())
        if key not in cache:
            cache[key] = _distance_to_target(run_skeleton(cfg, u0, coef, c), target)
        return cache[key]

    for c in cands:
        d = evaluate(c)
        if d <= tol_Y:
            n_feasible += 1
            if best is None or c.energy < best[0].energy:
                best = (c, d)
    if best is None:
        return RateEstimate(math.inf, None, math.inf, "infeasible")
    history = [best[0].energy]
    if refine and best[0].energy > 0:
        c, d = best
        for _ in range(sweeps):
            improved = False
            for j in range(c.coefficients.shape[0]):
                for k in range(n):
                    if c.coefficients[j, k] == 0:
                        continue
                    for f in refine_factors:
                        trial = c.coefficients.copy()
                        trial[j, k] *= f
                        tc = Control(c.breakpoints, trial)
                        td = evaluate(tc)
                        if td <= tol_Y and tc.energy < c.energy:
                            c, d = tc, td
                            improved = True
                            history.append(c.energy)
                            break
            if not improved:
                break
        best = (c, d)
    c, d = best
    status = "exact_zero" if c.energy == 0 else "upper_bound"
    return RateEstimate(c.energy, c, d, status, n_feasible, history)


# -- small-noise experiments ---------------------------------------------------------
def check_primed_regime(coef):
    """Reject coefficients with gradient dependence (constants K2, Kt2, L2 must vanish)."""
    if coef.gradient_terms_enabled:
        raise ConditionError("sigma depends on grad_h u; the small-noise results need K2 = Kt2 = L2 = 0")
    c = condition_constants(coef)
    if not c.primed_regime:
        raise ConditionError("condition constants K2, Kt2, L2 are not zero")
    return c


@dataclass
class WeakConvergenceTable:
    epsilons: list
    mean_Y: list
    stderr: list
    M_mc: int
    slope: float
    intercept: float
    distances: list = field(repr=False, default_factory=list)

    def rows(self):
        return [{"epsilon": e, "mean_Y": m, "stderr": s, "M_mc": self.M_mc} for e, m, s in zip(self.epsilons, self.mean_Y, self.stderr)]


def weak_convergence_experiment(phi, eps_list, M_mc, cfg, coef, u0, workers=1):
    """Monte Carlo mean of ||u^eps_phi - u^0_phi||_Y for each eps (common random numbers).

    Returns the table with a least-squares slope of log(mean) against log(eps)
    over the strictly positive eps values.
    """
    check_primed_regime(coef)
    skel = run_skeleton(cfg, u0, coef, phi)
    means, errs, dists = [], [], []
    for eps in eps_list:
        if eps == 0:
            d = np.zeros(M_mc)
        else:
            tr = run_ensemble(replace(cfg, epsilon=float(eps)), u0, coef, M_mc, control=phi, workers=workers)
            d = y_distances(tr, skel)
        dists.append(d)
        means.append(float(np.mean(d)))
        errs.append(float(np.std(d, ddof=1) / math.sqrt(M_mc)) if M_mc > 1 else 0.0)
    pos = [(e, m) for e, m in zip(eps_list, means) if e > 0 and m > 0]
    if len(pos) >= 2:
        slope, icpt = np.polyfit(np.log([e for e, _ in pos]), np.log([m for _, m in pos]), 1)
    else:
        slope = icpt = float("nan")
    return WeakConvergenceTable(list(eps_list), means, errs, M_mc, float(slope), float(icpt), dists)


def random_controls(count, M_bound, T, n_modes, n_intervals, seed, boundary_fraction=0.5):
    """Controls in S_M: the first ``boundary_fraction`` on the sphere int|phi|^2 = M, the rest inside."""
    g = rngmod.stream(seed, "control", 0)
    out = []
    dtj = T / n_intervals
    for i in range(count):
        c = g.standard_normal((n_intervals, n_modes))
        norm2 = np.sum(c**2) * dtj
        level = 1.0 if i < boundary_fraction * count else g.uniform(0.05, 1.0)
        c *= math.sqrt(level * M_bound / norm2)
        out.append(Control(np.linspace(0.0, T, n_intervals + 1), c))
    return out


@dataclass
class CompactnessReport:
    pairs: list
    d1: np.ndarray
    y: np.ndarray
    trend_ok: bool
    low_quartile_mean: float
    high_quartile_mean: float


def compactness_probe(M_bound, sample_count, cfg, coef, u0, n_intervals=4, seed=0, controls=None):
    """Skeleton Y-distances versus the weak proxy d1 over controls sampled from S_M.

    The continuity trend holds when pairs in the lowest d1 quartile have a
    smaller mean Y distance than pairs in the highest quartile.
    """
    if controls is None:
        controls = random_controls(sample_count, M_bound, cfg.T, coef.n_modes, n_intervals, seed)
    trajs = [run_skeleton(cfg, u0, coef, c) for c in controls]
    pairs, d1s, ys = [], [], []
    for i in range(len(controls)):
        for j in range(i + 1, len(controls)):
            pairs.append((i, j))
            d1s.append(d1_distance(controls[i], controls[j]))
            ys.append(float(y_distances(trajs[i], trajs[j])[0]))
    d1s, ys = np.array(d1s), np.array(ys)
    if len(pairs) < 4:
        return CompactnessReport(pairs, d1s, ys, True, float("nan"), float("nan"))
    order = np.argsort(d1s)
    q = max(1, len(order) // 4)
    lo, hi = float(np.mean(ys[order[:q]])), float(np.mean(ys[order[-q:]]))
    return CompactnessReport(pairs, d1s, ys, lo <= hi, lo, hi)
