"""Luxemburg norms and a p(x)-Laplacian solve with a variable exponent.

Run with ``python3 demos/variable_exponent.py``.
"""

import numpy as np

from varex.grid import build_grid
from varex.norms import luxemburg_norm, modular
from varex.operator import p_laplacian_problem
from varex.solver import solve_sample


def main():
    m = build_grid(1, [(0.0, 1.0)], 201)
    x = m.x[0]
    p = 2.0 + 1.5 * x
    for scale in (0.1, 1.0, 10.0):
        u = scale * np.sin(np.pi * x)
        norm = luxemburg_norm(u, p, None, m).value
        print(
            f"u = {scale:>4} sin(pi x): norm {norm:.6f}, modular {modular(u, p, None, m):.6f}, "
            f"modular of u/norm {modular(u / norm, p, None, m):.12f}"
        )
    sol = solve_sample(p_laplacian_problem(m, 1.0), p, None, m, 0)
    print(f"solve: {sol.iterations} iterations, residual {sol.residual:.1e}, max u {sol.u.max():.6f}")
    print("energy history:", " ".join(f"{e:.4f}" for e in sol.energy_history[:8]), "...")


if __name__ == "__main__":
    main()
