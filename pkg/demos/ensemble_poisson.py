"""Solve a weighted Poisson problem on two samples and compare with the exact mean.

Run with ``python3 demos/ensemble_poisson.py``.
"""

import numpy as np

from varex.grid import build_grid
from varex.operator import p_laplacian_problem
from varex.solver import solve_ensemble


def main():
    m = build_grid(1, [(0.0, 1.0)], 401, samples=(0.0, 1.0), probs=(0.5, 0.5))
    theta = 1.0 + m.t
    rep = solve_ensemble(p_laplacian_problem(m, 1.0), 2.0, theta, m)
    x = m.x[0][0]
    exact = 0.5 * (x * (1 - x) / 2) + 0.5 * (x * (1 - x) / 4)
    print(f"samples solved: {len(rep.samples)}, max residual {rep.residual_max:.2e}")
    print(f"mean maximum {rep.mean.max():.10f} (exact 3/32 = {3 / 32:.10f})")
    print(f"max nodal error {np.max(np.abs(rep.mean - exact)):.2e}")
    for s in rep.samples:
        print(f"  sample {s.t_index}: {s.iterations} iterations, residual {s.residual:.1e}")


if __name__ == "__main__":
    main()
