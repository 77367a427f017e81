"""Command-line entry point: ``anspde <subcommand> --config run.json``.

Every subcommand writes its outputs plus ``manifest.json`` into the output
directory (``--out``, overridden by the ``ANSPDE_OUT`` environment variable).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfgmod
from . import rng as rngmod
from .analysis import EnsembleSpec, energy_ledger, inequality_suite, jackknife, moment_estimator
from .ldp import Control, rate_upper_bound, weak_convergence_experiment, y_norm
from .noise import audit_condition, condition_constants
from .nonlinear_ops import fixtures, monotonicity_gap
from .solver import BlowUpError, couple_runs, run_ensemble, run_skeleton
from .spectral_field import VectorField, l2_norm, random_divfree_field, write_snapshot

EXIT_OK, EXIT_VIOLATION, EXIT_USAGE, EXIT_BLOWUP = 0, 1, 2, 3


class Outputs:
    """Single writer for one command's output directory."""

    def __init__(self, root):
        self.root = Path(root)
        self.files = []

    def _path(self, name):
        p = self.root / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.files.append(name)
        return p

    def csv(self, name, header, rows):
        with open(self._path(name), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(x) for x in r])

    def json(self, name, obj):
        with open(self._path(name), "w", encoding="utf-8") as fh:
            fh.write(json.dumps(obj, sort_keys=True, indent=2, default=_jsonable) + "\n")

    def snapshot(self, name, field):
        write_snapshot(field, self._path(name))

    def manifest(self, command, cfg, seed):
        stamp = os.environ.get("SOURCE_DATE_EPOCH")
        created = int(stamp) if stamp is not None else int(time.time())
        inventory = []
        for name in sorted(self.files):
            data = (self.root / name).read_bytes()
            inventory.append({"path": name, "bytes": len(data), "sha256": hashlib.sha256(data).hexdigest()})
        self.json(
            "manifest.json",
            {
                "artifact_version": __version__,
                "command": command,
                "config_hash": cfgmod.config_hash(cfg),
                "seed": seed,
                "created_unix": created,
                "files": inventory,
            },
        )


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (np.integer,)):
        return str(int(x))
    return x


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    raise TypeError(f"cannot serialise {type(x).__name__}")


def _finite(x):
    x = float(x)
    return x if math.isfinite(x) else None


# -- commands -------------------------------------------------------------------
def _setup(cfg, seed):
    solver = cfgmod.build_solver(cfg, seed)
    coef = cfgmod.build_noise(cfg, solver.grid)
    u0 = cfgmod.build_initial(cfg, solver.grid, solver.seed, solver.mask)
    return solver, coef, u0


def _norm_rows(traj, members=(0,)):
    rows = []
    for m in members:
        for j, t in enumerate(traj.times):
            rows.append([int(m), float(t)] + [float(traj.norms[k][m, j]) for k in ("h01", "h11", "gradh", "l2a2")])
    return rows


def cmd_simulate(cfg, seed, workers, out):
    solver, coef, u0 = _setup(cfg, seed)
    M = int(cfg.get("solver", {}).get("ensemble", 1))
    tr = run_ensemble(solver, u0, coef, M, workers=workers)
    out.csv("norms.csv", ["member", "t", "h01", "h11", "gradh", "l2a2"], _norm_rows(tr, range(M)))
    o = cfg.get("output", {})
    if o.get("snapshots", False):
        for j in range(len(tr.store_times)):
            out.snapshot(f"snapshots/state_{j:05d}.ansf", tr.state(j))
    out.json("summary.json", {"damping_dt_number": tr.diagnostics.get("damping_dt_number", 0.0), "members": M, "steps": solver.n_steps})
    return EXIT_OK


def cmd_verify(cfg, seed, workers, out):
    v = cfg.get("verify", {})
    n = int(v.get("n_samples", 20))
    if n < 1:
        raise cfgmod.ConfigError("verify: empty ensemble")
    drift = cfgmod.build_drift(cfg)
    params = cfgmod.build_inequality_params(cfg)
    spec = EnsembleSpec(
        n_samples=n,
        resolution=int(v.get("resolution", 16)),
        seed=int(cfg.get("seed", 0) if seed is None else seed),
        decay_exponent=float(v.get("decay", 4.5)),
        amplitude=float(v.get("amplitude", 1.0)),
        alpha=drift.alpha,
        drift=drift,
        params=params,
    )
    rep = inequality_suite(spec, workers)
    limits = dict(fixtures()["inequality_limits"])
    limits.update(v.get("limits", {}))
    checks = {f"inequality:{k}": ok for k, ok in rep.passes(limits).items()}
    # pointwise monotonicity with the configured kappa
    g = rngmod.stream(spec.seed, "audit", 0)
    y = g.standard_normal((int(v.get("n_pairs", 100000)), 3))
    z = g.standard_normal(y.shape)
    gap = monotonicity_gap(y, z, drift.alpha, params.kappa)
    scale = (np.linalg.norm(y, axis=1) + np.linalg.norm(z, axis=1)) ** (2 * drift.alpha + 2)
    mono_viol = int(np.sum(gap < -1e-12 * scale))
    checks["monotonicity"] = mono_viol == 0
    # noise conditions
    solver, coef, _ = _setup(cfg, seed)
    consts = condition_constants(coef)
    samples = []
    for i in range(int(v.get("n_audit", 10))):
        r = rngmod.stream(spec.seed, "audit", i + 1)
        u = random_divfree_field(solver.grid, spec.decay_exponent, spec.amplitude, r)
        w = random_divfree_field(solver.grid, spec.decay_exponent, spec.amplitude, r)
        samples.append((float(r.uniform(0, solver.T)), u, w))
    audit = audit_condition(coef, consts, samples, nu=drift.nu)
    for name in audit.margins:
        checks[f"condition:{name}"] = not any(vn == name for vn, _ in audit.violations)
    out.csv("inequalities.csv", ["lemma_id", "sample_id", "lhs", "rhs", "ratio", "N", "seed"], [list(r) + [spec.resolution, spec.seed] for r in rep.rows])
    out.json(
        "verify.json",
        {
            "checks": checks,
            "maxima": {k: _finite(x) for k, x in rep.maxima.items()},
            "limits": limits,
            "degenerate": rep.degenerate,
            "monotonicity_violations": mono_viol,
            "kappa": params.kappa,
            "constants": consts.as_dict(),
            "audit_margins": {k: float(x) for k, x in audit.margins.items()},
            "audit_violations": [list(x) for x in audit.violations],
        },
    )
    failed = [k for k, ok in checks.items() if not ok]
    for k in failed:
        print(f"violation: {k}", file=sys.stderr)
    return EXIT_VIOLATION if failed else EXIT_OK


def cmd_energy_audit(cfg, seed, workers, out):
    solver, coef, u0 = _setup(cfg, seed)
    solver = replace(solver, record_ledger=True, store_every=solver.n_steps)
    M = int(cfg.get("energy_audit", {}).get("ensemble", cfg.get("solver", {}).get("ensemble", 1)))
    tr = run_ensemble(solver, u0, coef, M, workers=workers)
    led = energy_ledger(tr, solver, coef)
    names = list(led.terms)
    rows = []
    for j in range(len(tr.times) - 1):
        rows.append([j, float(tr.times[j])] + [math.fsum(led.terms[k][:, j]) / M for k in names])
    out.csv("ledger.csv", ["step", "t"] + names, rows)
    summary = {k: dict(zip(("mean", "stderr"), jackknife(led.total(k)) if M > 1 else (float(led.total(k)[0]), 0.0))) for k in names}
    gap = led.final_energy() - led.predicted_energy()
    summary["balance_gap"] = dict(zip(("mean", "stderr"), jackknife(gap) if M > 1 else (float(gap[0]), 0.0)))
    summary["dissipative_nonpositive"] = led.dissipative_nonpositive()
    out.json("ledger_summary.json", summary)
    return EXIT_OK


def cmd_moments(cfg, seed, workers, out):
    solver, coef, _ = _setup(cfg, seed)
    m = cfg.get("moments", {})
    cutoffs = m.get("cutoffs", [8, 16, 32])
    M = int(m.get("M", 30))
    cfgs = [replace(solver, galerkin_cutoff=n) for n in cutoffs]
    reps = moment_estimator(cfgs, M, lambda c: cfgmod.build_initial(cfg, c.grid, c.seed, c.mask), coef, workers)
    h = cfgmod.config_hash(cfg)
    rows = []
    for r in reps:
        r.config_hash = h
        rows.extend(r.rows())
    out.json("moments.json", rows)
    return EXIT_OK


def _control(spec, T, n):
    if spec is None:
        return Control.zero(T, n)
    if spec.get("type") == "constant":
        c = np.zeros(n)
        vals = spec.get("coefficients", [])
        c[: len(vals)] = vals
        return Control.constant(T, c)
    return Control.from_dict(spec)


def cmd_skeleton(cfg, seed, workers, out):
    solver, coef, u0 = _setup(cfg, seed)
    phi = _control(cfg.get("skeleton", {}).get("control"), solver.T, coef.n_modes)
    tr = run_skeleton(solver, u0, coef, phi)
    out.csv("skeleton_norms.csv", ["member", "t", "h01", "h11", "gradh", "l2a2"], _norm_rows(tr))
    y = y_norm(tr)
    out.json("skeleton.json", {"control_energy": phi.energy, "y_sup_l2": y.sup_l2, "y_h10_l2": y.h10_l2, "y_total": y.total})
    if cfg.get("output", {}).get("snapshots", False):
        out.snapshot("skeleton_final.ansf", tr.final_state())
    return EXIT_OK


def cmd_ldp(cfg, seed, workers, out):
    solver, coef, u0 = _setup(cfg, seed)
    spec = cfg.get("ldp", {})
    phi = _control(spec.get("control"), solver.T, coef.n_modes)
    eps = [float(e) for e in spec.get("epsilons", [1e-1, 1e-2, 1e-3])]
    M = int(spec.get("M_mc", 20))
    tab = weak_convergence_experiment(phi, eps, M, solver, coef, u0, workers)
    out.csv("weak_convergence.csv", ["epsilon", "mean_Y", "stderr", "M_mc"], [[r["epsilon"], r["mean_Y"], r["stderr"], r["M_mc"]] for r in tab.rows()])
    target = run_skeleton(solver, u0, coef, phi)
    cands = [phi.scaled(s) for s in spec.get("candidate_scales", [0.5, 1.0, 1.5])]
    est = rate_upper_bound(target, cands, solver, coef, u0, float(spec.get("tol_Y", 1e-8)), refine=bool(spec.get("refine", False)))
    out.json(
        "ldp.json",
        {
            "slope": _finite(tab.slope),
            "rate_upper_bound": _finite(est.value),
            "rate_status": est.status,
            "target_control_energy": phi.energy,
            "match_residual": _finite(est.residual),
        },
    )
    return EXIT_OK


def cmd_couple(cfg, seed, workers, out):
    solver, coef, u0 = _setup(cfg, seed)
    spec = cfg.get("couple", {})
    deltas = [float(d) for d in spec.get("deltas", [1e-3, 1e-4, 1e-5])]
    r = rngmod.stream(solver.seed, "initial", 1000)
    direction = random_divfree_field(solver.grid, 4.0, 1.0, r)
    direction = VectorField(direction.coeffs * solver.mask, solver.grid, True)
    direction = direction * (1.0 / l2_norm(direction))
    rows = []
    for d in [0.0] + deltas:
        res = couple_runs(solver, u0, u0 + d * direction, coef)
        rows.append([d, res.sup_l2, res.sup_l2 / d if d > 0 else 0.0, res.int_gradh2, int(res.identical)])
    out.csv("couple.csv", ["delta", "sup_l2", "ratio", "int_gradh2", "identical"], rows)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "verify": cmd_verify,
    "energy-audit": cmd_energy_audit,
    "moments": cmd_moments,
    "skeleton": cmd_skeleton,
    "ldp": cmd_ldp,
    "couple": cmd_couple,
}


def build_parser():
    p = argparse.ArgumentParser(prog="anspde", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, metavar="PATH", help="UTF-8 JSON run configuration")
        s.add_argument("--seed", type=int, default=None, help="override the config seed (unsigned 64-bit)")
        s.add_argument("--workers", type=int, default=1, help="worker processes for ensembles")
        s.add_argument("--out", default=None, metavar="DIR", help="output directory (ANSPDE_OUT overrides)")
        s.add_argument("--dry-run", action="store_true", help="validate the configuration and exit")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = cfgmod.load(args.config)
    except cfgmod.ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    if args.dry_run:
        print(f"config ok: {cfgmod.config_hash(cfg)}")
        return EXIT_OK
    root = os.environ.get("ANSPDE_OUT") or args.out or os.path.join("runs", args.command)
    out = Outputs(root)
    try:
        code = COMMANDS[args.command](cfg, seed, max(1, args.workers), out)
    except cfgmod.ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except BlowUpError as e:
        print(f"blow-up: {e}", file=sys.stderr)
        return EXIT_BLOWUP
    out.manifest(args.command, cfg, seed)
    return code


if __name__ == "__main__":
    sys.exit(main())
