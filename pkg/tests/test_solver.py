import math

import numpy as np
import pytest

from varex.grid import build_grid
from varex.operator import custom_problem, p_laplacian_problem
from varex.solver import (
    SolveConfig,
    SolverError,
    bracket_convergence_diagnostic,
    refine_study,
    solve_ensemble,
    solve_sample,
    thread_count,
    weak_residual,
)

P4_MAX = 0.75 * 0.5 ** (4 / 3)


def test_poisson_oracle(line401):
    x = line401.x[0][0]
    sol = solve_sample(p_laplacian_problem(line401, 1.0), 2.0, None, line401, 0)
    h = 1 / 400
    assert np.max(np.abs(sol.u - x * (1 - x) / 2)) <= 2 * h * h
    assert sol.residual <= 1e-10
    assert sol.converged and sol.iterations == 1


def test_p4_closed_form(line401):
    sol = solve_sample(p_laplacian_problem(line401, 1.0), 4.0, None, line401, 0)
    x = line401.x[0][0]
    exact = 0.75 * (0.5 ** (4 / 3) - np.abs(0.5 - x) ** (4 / 3))
    assert abs(sol.u.max() - P4_MAX) <= 5e-3
    assert np.max(np.abs(sol.u - exact)) <= 5e-3
    assert sol.residual <= 1e-6


def test_zero_datum_gives_zero(line101):
    sol = solve_sample(p_laplacian_problem(line101, 0.0), 3.0, None, line101, 0)
    assert sol.iterations == 1
    assert np.all(sol.u == 0.0)
    assert weak_residual(np.zeros(line101.field_shape), p_laplacian_problem(line101, 0.0), 3.0, None, line101) == 0.0


def test_residual_detects_perturbation(line401):
    spec = p_laplacian_problem(line401, 1.0)
    sol = solve_sample(spec, 2.0, None, line401, 0)
    pert = sol.u + 0.1 * np.sin(np.pi * line401.x[0][0])
    res = weak_residual(pert[None], spec, 2.0, None, line401)
    expected = 0.1 * math.pi**2 / 2 / (1 + math.pi / math.sqrt(2))
    assert res >= 0.99 * expected


def test_residual_custom_panel(line101):
    spec = p_laplacian_problem(line101, 1.0)
    u = solve_sample(spec, 2.0, None, line101, 0).u[None]
    x = line101.x[0]
    panel = [x * (1 - x), np.sin(2 * np.pi * x) * (x > 0) * (x < 1)]
    assert weak_residual(u, spec, 2.0, None, line101, panel=panel) < 1e-10
    with pytest.raises(ValueError):
        weak_residual(u, spec, 2.0, None, line101, panel=[])
    with pytest.raises(ValueError):
        weak_residual(u, spec, 2.0, None, line101, panel=[x])


def test_ensemble_oracle():
    m = build_grid(1, [(0.0, 1.0)], 401, samples=(0.0, 1.0))
    rep = solve_ensemble(p_laplacian_problem(m, 1.0), 2.0, 1 + m.t, m)
    x = m.grid.coords[0]
    h = 1 / 400
    assert rep.passed
    assert abs(rep.mean.max() - 3 / 32) <= 2 * h * h
    assert np.max(np.abs(rep.mean - 3 * x * (1 - x) / 8)) <= 2 * h * h
    assert np.max(np.abs(rep.samples[1].u - x * (1 - x) / 4)) <= 2 * h * h


def test_single_sample_ensemble(line101):
    spec = p_laplacian_problem(line101, 1.0)
    rep = solve_ensemble(spec, 3.0, None, line101)
    assert np.array_equal(rep.mean, rep.samples[0].u)
    assert np.all(rep.std == 0.0)


def test_identical_samples_have_zero_std():
    m = build_grid(1, [(0.0, 1.0)], 101, samples=(0.0, 0.0))
    rep = solve_ensemble(p_laplacian_problem(m, 1.0), 2.0, None, m)
    assert np.all(rep.std == 0.0)


def test_energy_descent_after_first_step(line401):
    for p in (1.5, 3.0, 4.0):
        cfg = SolveConfig(eps_reg=1e-8)
        sol = solve_sample(p_laplacian_problem(line401, 1.0), p, None, line401, 0, cfg)
        hist = sol.energy_history[1:]
        assert all(b <= a + 1e-12 * max(1.0, abs(a)) for a, b in zip(hist[:-1], hist[1:]))


def test_maximum_principle(square33):
    x, y = square33.x
    f1 = np.sin(3 * x) * y
    f2 = f1 + 0.5 + x**2
    u1 = solve_sample(p_laplacian_problem(square33, f1), 2.0, None, square33, 0).u
    u2 = solve_sample(p_laplacian_problem(square33, f2), 2.0, None, square33, 0).u
    assert np.all(u1 <= u2 + 1e-10)


def test_two_dimensional_poisson(square33):
    sol = solve_sample(p_laplacian_problem(square33, 1.0), 2.0, None, square33, 0)
    # series value of the torsion function maximum on the unit square
    assert abs(sol.u.max() - 0.0736713532) < 1e-3
    assert np.allclose(sol.u, sol.u.T, atol=1e-8)


def test_bracket_convergence_diagnostic(line401):
    spec = p_laplacian_problem(line401, 1.0)
    sol = solve_sample(spec, 4.0, None, line401, 0, record_iterates=True)
    rep = bracket_convergence_diagnostic(spec, 4.0, None, line401, 0, sol.iterates)
    assert rep.decreasing
    assert rep.brackets[-1] < rep.brackets[0]


def test_uniqueness_probe(line101):
    spec = p_laplacian_problem(line101, 1.0)
    rng = np.random.default_rng(0)
    sols = [
        solve_sample(spec, 3.0, None, line101, 0, u0=rng.standard_normal(101) * 0.1)
        for _ in range(2)
    ]
    assert np.max(np.abs(sols[0].u - sols[1].u)) <= 10 * sols[0].outer_tol


def test_nonconvergence_reports_diagnostics(line101):
    spec = p_laplacian_problem(line101, 1.0)
    with pytest.raises(SolverError) as info:
        solve_sample(spec, 4.0, None, line101, 0, SolveConfig(max_outer=2))
    diag = info.value.diagnostics
    assert diag is not None and not diag.converged
    assert len(diag.energy_history) == 3


def test_failed_sample_flags_ensemble():
    m = build_grid(1, [(0.0, 1.0)], 101, samples=(0.0, 1.0))
    rep = solve_ensemble(p_laplacian_problem(m, 1.0), 4.0, None, m, SolveConfig(max_outer=2))
    assert not rep.passed
    assert rep.mean is None and set(rep.failures) == {0, 1}


def test_custom_kernel_matches_model(line101):
    model = solve_sample(p_laplacian_problem(line101, 1.0), 3.0, None, line101, 0)
    custom = solve_sample(
        custom_problem(line101, 1.0, ["theta * normxi^(p-2) * xi1"], "0"), 3.0, None, line101, 0
    )
    assert np.max(np.abs(model.u - custom.u)) < 1e-8


def test_lower_order_term_converges(square33):
    spec = p_laplacian_problem(square33, 1.0, g="0.5/(1+s^2)")
    sol = solve_sample(spec, 2.0, None, square33, 0)
    assert sol.converged and sol.residual <= 1e-8


def test_refine_needs_two_levels():
    with pytest.raises(ValueError):
        refine_study(lambda m: (p_laplacian_problem(m, 1.0), 2.0, None), 101, 1)


def test_refine_manufactured_order():
    study = refine_study(
        lambda m: (p_laplacian_problem(m, "pi^2*sin(pi*x)"), 2.0, None),
        101, 3, exact=lambda m: np.sin(np.pi * m.x[0]),
    )
    assert study.fitted_order >= 1.9
    assert all(e <= 2 * h * h for e, h in zip(study.errors, study.h))


def test_refine_p4_self_convergence():
    study = refine_study(lambda m: (p_laplacian_problem(m, 1.0), 4.0, None), 101, 3)
    assert study.differences_decreasing


def test_refine_exact_discrete_case():
    study = refine_study(
        lambda m: (p_laplacian_problem(m, 1.0), 2.0, None),
        101, 3, exact=lambda m: m.x[0] * (1 - m.x[0]) / 2,
    )
    assert study.exact_discrete and study.fitted_order == math.inf


@pytest.mark.parametrize(
    "kwargs",
    [dict(eps_reg=0.0), dict(damping=0.0), dict(damping=1.5), dict(max_outer=0), dict(outer_tol=-1.0)],
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        SolveConfig(**kwargs)


def test_default_damping_and_tolerance():
    assert SolveConfig().resolved(2.0, 2.0) == (1.0, 1e-8)
    assert SolveConfig().resolved(3.0, 3.0) == (0.5, 1e-6)
    assert SolveConfig(damping=0.7, outer_tol=1e-5).resolved(2.0, 2.0) == (0.7, 1e-5)


def test_thread_cap(monkeypatch):
    monkeypatch.setenv("VAREX_THREADS", "2")
    assert thread_count(8) == 2
    assert thread_count(1) == 1
