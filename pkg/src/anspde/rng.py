"""Keyed counter-based random streams.

Every stream is a Philox generator whose key is derived from
``(seed, purpose, index...)``, so the numbers a trajectory sees depend only
on its own key and never on scheduling or worker count.
"""

import numpy as np

PURPOSES = {
    "noise": 1,
    "initial": 2,
    "ensemble": 3,
    "inequality": 4,
    "control": 5,
    "audit": 6,
}


def stream(seed, purpose, *index):
    """Independent generator keyed by (seed, purpose, index...)."""
    if purpose not in PURPOSES:
        raise ValueError(f"unknown stream purpose {purpose!r}")
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF, PURPOSES[purpose], *(int(i) for i in index)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def brownian_increments(seed, trajectory, n_steps, n_modes, dt):
    """Increments of ``n_modes`` standard Wiener processes on a uniform grid.

    Row ``j`` is the increment over step ``j`` of trajectory ``trajectory``;
    it is a pure function of (seed, trajectory, j) for fixed shapes.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    g = stream(seed, "noise", trajectory)
    return np.sqrt(dt) * g.standard_normal((n_steps, n_modes))
