"""Measure the frozen numerical fixtures and write src/anspde/data/fixtures.json.

Run once after a deliberate numerical change:

    python3 tools/measure_fixtures.py [--samples 200] [--workers 1]
"""

import argparse
import json
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "tests"))

from setups import rate_setup, rate_tolerance, weak_convergence_setup  # noqa: E402

from anspde.analysis import LEMMAS, EnsembleSpec, inequality_suite  # noqa: E402
from anspde.ldp import rate_upper_bound, weak_convergence_experiment  # noqa: E402
from anspde.nonlinear_ops import kappa_star_scan  # noqa: E402
from anspde.solver import run_skeleton  # noqa: E402

OUT = ROOT / "src" / "anspde" / "data" / "fixtures.json"
ALPHAS = (1.25, 1.5, 2.0)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=200)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    fx = {"kappa_star": {}}
    for a in ALPHAS:
        value, (r, theta) = kappa_star_scan(a, 1000, 1000)
        fx["kappa_star"][f"{a:g}"] = {"value": value, "radius_ratio": r, "angle": theta}
        print(f"kappa_star({a:g}) = {value!r}")

    rep = inequality_suite(EnsembleSpec(n_samples=args.samples, resolution=32), args.workers)
    fx["inequality_maxima_N32"] = {k: rep.maxima[k] for k in LEMMAS}
    # verify limits: measured maxima widened by the 20% resolution band
    fx["inequality_limits"] = {k: v + 0.2 * abs(v) for k, v in fx["inequality_maxima_N32"].items()}
    print("inequality maxima", fx["inequality_maxima_N32"])

    cfg, coef, u0, phi, cands = rate_setup()
    target = run_skeleton(cfg, u0, coef, phi)
    tol = rate_tolerance(target, cfg, coef, u0)
    raw = rate_upper_bound(target, cands, cfg, coef, u0, tol)
    ref = rate_upper_bound(target, cands, cfg, coef, u0, tol, refine=True)
    fx["rate_refinement"] = {"raw": raw.value, "refined": ref.value, "tol_Y": tol}
    print("rate refinement", fx["rate_refinement"])

    cfg, coef, u0, phi = weak_convergence_setup()
    tab = weak_convergence_experiment(phi, [1e-1, 1e-2, 1e-3], 200, cfg, coef, u0, args.workers)
    fx["weak_convergence"] = {"slope": tab.slope, "mean_Y": tab.mean_Y, "M_mc": 200}
    print("weak convergence slope", tab.slope)

    OUT.write_text(json.dumps(fx, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
