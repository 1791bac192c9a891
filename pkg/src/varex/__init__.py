"""Weighted variable-exponent Sobolev spaces on a product measure D x Omega.

Modules
-------
grid        tensor grids, sample spaces, quadrature and linear elements
fields      exponent, weight and stochastic fields; weight hypotheses
norms       modulars and Luxemburg norms
embeddings  Hölder, Poincaré, embedding chain, weak convergence
operator    the quasilinear operator, growth conditions and probes
solver      regularized Kačanov solver and weak residuals
cli         command-line entry point
"""

from .grid import ProductMeasureGrid, SampleSpace, SpatialGrid, build_grid, integrate
from .fields import (
    AuxExponentField,
    DomainError,
    ExponentField,
    StochasticField,
    VectorField,
    WeightField,
    conjugate_exponent,
    conjugate_weight,
    gradient,
    validate_weight,
)
from .norms import NotInSpaceError, check_prop2, luxemburg_norm, modular, sobolev_norm
from .embeddings import (
    HypothesisViolation,
    check_embedding_chain,
    check_holder,
    critical_exponents,
    poincare_ratio,
    weak_convergence_panel,
)
from .operator import (
    ProblemSpec,
    check_growth,
    coercivity_probe,
    custom_problem,
    monotonicity_bracket,
    p_laplacian_problem,
    pairing,
)
from .solver import SolveConfig, SolverError, refine_study, solve_ensemble, solve_sample, weak_residual

__version__ = "0.1.0"
