"""Compare the compiled and numpy backends of the pointwise kernels.

    python3 benchmarks/bench_kernels.py [--n 32] [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from anspde import _kernels_py, kernels

try:
    from anspde import _kernels as compiled
except ImportError:
    compiled = None


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=32, help="fine-grid points per axis")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    r = np.random.default_rng(0)
    npts = args.n**3
    u = r.standard_normal((1, 3, npts))
    rr = np.abs(r.standard_normal((1, npts)))
    y, z = r.standard_normal((2, npts, 3))
    cases = {
        "damping_pointwise": lambda b: kernels.damping_pointwise(u, 1.5, backend=b),
        "weighted_power_sum": lambda b: kernels.weighted_power_sum(rr, u, 1.5, backend=b),
        "monotonicity_gap": lambda b: kernels.monotonicity_gap(y, z, 1.5, 0.125, backend=b),
    }
    backends = {"python": _kernels_py}
    if compiled is not None:
        backends["compiled"] = compiled
    print(f"{'kernel':<22}" + "".join(f"{name:>14}" for name in backends) + f"{'speedup':>10}")
    for name, fn in cases.items():
        times = {b: min(timeit.repeat(lambda: fn(m), number=3, repeat=args.repeat)) / 3 for b, m in backends.items()}
        speed = times["python"] / times["compiled"] if "compiled" in times else float("nan")
        print(f"{name:<22}" + "".join(f"{1e3 * t:>12.2f}ms" for t in times.values()) + f"{speed:>9.1f}x")


if __name__ == "__main__":
    main()
