"""Discrete weak solutions by regularized Kačanov iteration.

Each probability sample is solved independently on linear elements. At
iterate ``u_k`` the flux is frozen into the scalar coefficient

    a_k = theta * (|grad u_k|**2 + eps**2) ** ((p - 2) / 2)

(model kernel) and the lower-order term is lagged, giving the linear
Dirichlet problem ``-div(a_k grad w) = f - A0(u_k, grad u_k)``. It is
solved with Jacobi-preconditioned conjugate gradients and the iterate is
relaxed towards ``w``. For ``g = 0`` the step ``w - u_k`` is a descent
direction of the regularized energy, so damping is halved whenever the
energy would increase.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg, spsolve

from .grid import ProductMeasureGrid, build_grid
from .norms import luxemburg_root
from .operator import (
    ProblemSpec,
    _element_context,
    element_state,
    element_values,
    element_weights,
    monotonicity_bracket,
    residual_vector,
)

__all__ = [
    "SolveConfig",
    "SolverError",
    "SampleSolution",
    "SolveReport",
    "solve_sample",
    "solve_ensemble",
    "weak_residual",
    "default_panel",
    "energy",
    "RefinementStudy",
    "refine_study",
    "bracket_convergence_diagnostic",
    "thread_count",
]


class SolverError(RuntimeError):
    """Outer iteration failed; ``diagnostics`` holds the partial state."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class SolveConfig:
    """Iteration controls.

    ``damping`` and ``outer_tol`` default by exponent: damping 1 for
    ``p`` in [1.8, 2.5] and 0.5 otherwise; tolerance 1e-8 for ``p = 2``
    and 1e-6 otherwise. ``residual_panel_size`` caps the number of hat
    functions in the residual panel (0 keeps all of them).
    """

    eps_reg: float = 1e-6
    max_outer: int = 200
    damping: Optional[float] = None
    lin_tol: float = 1e-12
    outer_tol: Optional[float] = None
    residual_panel_size: int = 0
    max_halvings: int = 6
    lin_maxiter: Optional[int] = None

    def __post_init__(self):
        if not self.eps_reg > 0:
            raise ValueError("eps_reg must be positive")
        if self.damping is not None and not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if self.max_outer < 1:
            raise ValueError("max_outer must be at least 1")
        if not self.lin_tol > 0:
            raise ValueError("lin_tol must be positive")
        if self.outer_tol is not None and not self.outer_tol > 0:
            raise ValueError("outer_tol must be positive")
        if self.residual_panel_size < 0:
            raise ValueError("residual_panel_size must be nonnegative")

    def resolved(self, p_minus, p_plus):
        damping = self.damping
        if damping is None:
            damping = 1.0 if 1.8 <= p_minus and p_plus <= 2.5 else 0.5
        tol = self.outer_tol
        if tol is None:
            tol = 1e-8 if p_minus == p_plus == 2.0 else 1e-6
        return damping, tol


def thread_count(n_tasks: int) -> int:
    """Worker count capped by ``VAREX_THREADS`` and the number of tasks."""
    cap = os.environ.get("VAREX_THREADS")
    n = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(n, n_tasks))


# --- per-sample pieces -------------------------------------------------------------


def _sample_slice(values, m, t):
    arr = np.broadcast_to(np.asarray(getattr(values, "values", values), dtype=float), m.field_shape)
    return np.ascontiguousarray(arr[t : t + 1])


def _restrict(spec: ProblemSpec, p, v, m: ProductMeasureGrid, t: int):
    sub = m.restrict(t)
    spec_t = replace(
        spec,
        f=_sample_slice(spec.f, m, t),
        gamma_fn=_sample_slice(spec.gamma_fn, m, t),
        k_fn=_sample_slice(spec.k_fn, m, t),
    )
    v_t = None if v is None else _sample_slice(v, m, t)
    return spec_t, _sample_slice(p, m, t), v_t, sub


def _interior(m):
    return ~np.asarray(m.grid.boundary_mask).ravel()


def _stiffness(coef, m):
    """``sum_T |T| coef_T grad(phi_i) . grad(phi_j)`` for one sample."""
    mesh = m.grid.elements
    d = sp.diags(mesh.measure * coef)
    k = None
    for g in mesh.grad:
        term = g.T @ d @ g
        k = term if k is None else k + term
    return k.tocsr()


def _linear_solve(k, b, cfg, x0=None):
    """Jacobi-preconditioned CG; sparse direct fallback if CG stalls."""
    diag = k.diagonal()
    if np.any(diag <= 0):
        raise SolverError("frozen coefficient is not positive")
    if not np.any(b):
        return np.zeros_like(b), False
    jac = LinearOperator(k.shape, matvec=lambda r: r / diag, dtype=float)
    maxiter = cfg.lin_maxiter or max(1000, 4 * b.size)
    x, info = cg(k, b, x0=x0, rtol=cfg.lin_tol, atol=0.0, maxiter=maxiter, M=jac)
    if info == 0:
        return x, False
    return spsolve(k.tocsc(), b), True


def _frozen_coefficient(spec, u_state, theta, pe, x, t, eps):
    xi = u_state.grad
    if spec.model_kind == "p_laplacian_with_g":
        sq = np.sum(xi**2, axis=-1) + eps**2
        return theta * sq ** ((pe - 2.0) / 2.0)
    # secant coefficient A(xi).xi / |xi|^2, evaluated at |xi| >= eps
    mag = np.linalg.norm(xi, axis=-1)
    small = mag < eps
    xi_eff = np.where(small[..., None], 0.0, xi)
    xi_eff[..., 0] = np.where(small, eps, xi_eff[..., 0])
    a = spec.flux(u_state.u, xi_eff, theta, pe, x, t)
    coef = np.sum(a * xi_eff, axis=-1) / np.sum(xi_eff**2, axis=-1)
    return coef


def energy(u, spec, p, v, m, eps=1e-6) -> float:
    """``E int (theta/p)(|grad u|^2 + eps^2)^(p/2) - f u`` with element quadrature."""
    theta, pe, _, _ = _element_context(p, v, m)
    st = element_state(u, m)
    w = element_weights(m)
    sq = np.sum(st.grad**2, axis=-1) + eps**2
    fe = element_values(spec.f, m)
    return float(np.sum(w * (theta / pe * sq ** (pe / 2.0) - fe * st.u)))


# --- weak residual ----------------------------------------------------------------


def _hat_gradient_norms(p, v, m, iterations=100):
    """``||grad hat_i||_{p,theta}`` for every node at once.

    Each hat has a few elements in its support, so the Luxemburg equation
    is solved for all nodes simultaneously by bisection in log(lambda).
    """
    mesh = m.grid.elements
    theta, pe, _, _ = _element_context(p, v, m)
    sq = None
    for g in mesh.grad:
        term = g.multiply(g)
        sq = term if sq is None else sq + term
    coo = sq.tocoo()
    rows, cols, mag = coo.row, coo.col, np.sqrt(coo.data)
    w = (element_weights(m) * theta)[0][rows]
    pr = pe[0][rows]
    n_nodes = sq.shape[1]

    def rho(log_lam):
        return np.bincount(cols, w * np.exp(pr * (np.log(mag) - log_lam[cols])), n_nodes)

    r1 = rho(np.zeros(n_nodes))
    lo = np.log(np.maximum(np.minimum(r1 ** (1 / pr.max()), r1 ** (1 / pr.min())), 1e-300)) - 1
    hi = np.log(np.maximum(np.maximum(r1 ** (1 / pr.max()), r1 ** (1 / pr.min())), 1e-300)) + 1
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        over = rho(mid) > 1.0
        lo = np.where(over, mid, lo)
        hi = np.where(over, hi, mid)
    out = np.exp(0.5 * (lo + hi))
    out[r1 == 0] = 0.0
    return out


def default_panel(m: ProductMeasureGrid, k_max: int = 4) -> list:
    """Sine tensor modes ``prod_i sin(k_i pi (x_i - a_i) / L_i)``, ``k_i <= k_max``."""
    grid = m.grid
    axes = []
    for (lo, hi), x in zip(grid.bounds, grid.mesh):
        axes.append([np.sin(k * np.pi * (x - lo) / (hi - lo)) for k in range(1, k_max + 1)])
    modes = axes[0]
    for more in axes[1:]:
        modes = [a * b for a in modes for b in more]
    out = []
    for mode in modes:
        mode = np.array(mode)
        mode[np.asarray(grid.boundary_mask)] = 0.0
        out.append(np.broadcast_to(mode, m.field_shape))
    return out


def _panel_norms(panel, p, v, m):
    theta, pe, _, _ = _element_context(p, v, m)
    w = element_weights(m) * theta
    norms = []
    for phi in panel:
        st = element_state(phi, m)
        norms.append(luxemburg_root(np.linalg.norm(st.grad, axis=-1), pe, w).value)
    return np.array(norms)


def _check_panel_field(phi, m):
    phi = np.broadcast_to(np.asarray(getattr(phi, "values", phi), dtype=float), m.field_shape)
    if np.any(phi[:, np.asarray(m.grid.boundary_mask)] != 0.0):
        raise ValueError("panel test functions must vanish on the boundary")
    return phi


def _hat_indices(m, size):
    idx = np.flatnonzero(_interior(m))
    if size and size < idx.size:
        idx = idx[np.unique(np.linspace(0, idx.size - 1, size).round().astype(int))]
    return idx


def _sample_residual(u_t, spec_t, p_t, v_t, sub, hat_norms, modes, mode_norms, hats):
    r = residual_vector(u_t, spec_t, p_t, v_t, sub)[0]
    worst = 0.0
    if hats.size:
        worst = float(np.max(np.abs(r[hats]) / (1.0 + hat_norms[hats])))
    for mode, norm in zip(modes, mode_norms):
        worst = max(worst, abs(float(r @ np.ravel(mode[0]))) / (1.0 + float(norm)))
    return worst


def weak_residual(u, spec, p, v, m: ProductMeasureGrid, panel=None, panel_size: int = 0) -> float:
    """Largest normalized defect ``|<Gamma(u), phi> - E int f phi| / (1 + ||grad phi||)``.

    With ``panel=None`` the panel is the hat function of every interior
    node plus the sine modes with wave numbers up to 4, localized in each
    sample in turn. An explicit panel is a list of fields (spatial or full
    shape) vanishing on the boundary, paired over the whole product
    measure.
    """
    u = np.broadcast_to(np.asarray(getattr(u, "values", u), dtype=float), m.field_shape)
    if panel is not None:
        if len(panel) == 0:
            raise ValueError("residual panel is empty")
        fields = [_check_panel_field(phi, m) for phi in panel]
        r = residual_vector(u, spec, p, v, m)
        norms = _panel_norms(fields, p, v, m)
        vals = [abs(float(np.sum(r * phi.reshape(r.shape)))) / (1.0 + n) for phi, n in zip(fields, norms)]
        return max(vals)
    worst = 0.0
    for t in range(m.omega.m):
        spec_t, p_t, v_t, sub = _restrict(spec, p, v, m, t)
        ctx = _ResidualContext(spec_t, p_t, v_t, sub, panel_size)
        worst = max(worst, ctx(u[t : t + 1]))
    return worst


class _ResidualContext:
    """Precomputed panel norms for repeated residual evaluation on one sample."""

    def __init__(self, spec_t, p_t, v_t, sub, panel_size):
        self.args = (spec_t, p_t, v_t, sub)
        self.hats = _hat_indices(sub, panel_size)
        self.hat_norms = _hat_gradient_norms(p_t, v_t, sub)
        self.modes = default_panel(sub)
        self.mode_norms = _panel_norms(self.modes, p_t, v_t, sub)

    def __call__(self, u_t):
        spec_t, p_t, v_t, sub = self.args
        return _sample_residual(
            u_t, spec_t, p_t, v_t, sub, self.hat_norms, self.modes, self.mode_norms, self.hats
        )


# --- solves ---------------------------------------------------------------------------


@dataclass
class SampleSolution:
    t_index: int
    u: np.ndarray
    iterations: int
    energy_history: list
    residual: float
    converged: bool
    damping: float
    outer_tol: float
    eps_reg: float
    linear_fallbacks: int = 0
    halvings: int = 0
    iterates: list = field(default_factory=list, repr=False)


def _poisson_guess(spec_t, v_t, sub, cfg):
    theta, _, _, _ = _element_context(2.0, v_t, sub)
    mesh = sub.grid.elements
    inner = _interior(sub)
    k = _stiffness(theta[0], sub)[inner][:, inner]
    b = (mesh.measure * element_values(spec_t.f, sub)[0]) @ mesh.centroid
    u = np.zeros(sub.grid.size)
    u[inner], _ = _linear_solve(k, b[inner], cfg)
    return u


def solve_sample(
    spec: ProblemSpec, p, v, m: ProductMeasureGrid, t_index: int, cfg: SolveConfig = SolveConfig(),
    u0=None, record_iterates: bool = False,
) -> SampleSolution:
    """Solve the boundary value problem for one sample.

    Returns a :class:`SampleSolution` whose ``u`` has the spatial grid
    shape. ``u0`` overrides the Poisson initial guess (boundary values are
    zeroed).

    Raises
    ------
    SolverError
        If the stopping test is not met within ``cfg.max_outer`` iterations;
        ``diagnostics`` carries the last state.
    """
    spec_t, p_t, v_t, sub = _restrict(spec, p, v, m, t_index)
    p_minus, p_plus = float(p_t.min()), float(p_t.max())
    damping0, tol = cfg.resolved(p_minus, p_plus)
    eps = cfg.eps_reg
    mesh = sub.grid.elements
    inner = _interior(sub)
    theta, pe, x, t = _element_context(p_t, v_t, sub)
    fe = element_values(spec_t.f, sub)[0]
    residual = _ResidualContext(spec_t, p_t, v_t, sub, cfg.residual_panel_size)
    shape = (1,) + sub.grid.shape
    use_energy = spec_t.g_zero and spec_t.model_kind == "p_laplacian_with_g"

    if u0 is None:
        u = _poisson_guess(spec_t, v_t, sub, cfg)
    else:
        u = np.array(np.broadcast_to(np.asarray(u0, dtype=float), sub.grid.shape)).ravel()
        u[~inner] = 0.0

    def J(vec):
        return energy(vec.reshape(shape), spec_t, p_t, v_t, sub, eps)

    history = [J(u)]
    iterates = [u.reshape(sub.grid.shape).copy()] if record_iterates else []
    fallbacks = halvings = 0
    res = math.inf
    for it in range(1, cfg.max_outer + 1):
        st = element_state(u.reshape(shape), sub)
        coef = _frozen_coefficient(spec_t, st, theta, pe, x, t, eps)[0]
        if not np.all(np.isfinite(coef)) or np.any(coef <= 0):
            raise SolverError("frozen coefficient lost positivity", None)
        with np.errstate(all="ignore"):
            a0 = np.asarray(spec_t.lower(st.u, st.grad, theta, pe, x, t), dtype=float)[0]
        k = _stiffness(coef, sub)[inner][:, inner]
        b = (mesh.measure * (fe - a0)) @ mesh.centroid
        w = np.zeros_like(u)
        w[inner], fell_back = _linear_solve(k, b[inner], cfg, x0=u[inner])
        fallbacks += int(fell_back)

        omega = damping0
        step = w - u
        cand = u + omega * step
        e_new = J(cand)
        if use_energy:
            e_old = history[-1]
            n_half = 0
            while e_new > e_old + 1e-12 * max(1.0, abs(e_old)) and n_half < cfg.max_halvings:
                omega *= 0.5
                n_half += 1
                cand = u + omega * step
                e_new = J(cand)
            halvings += n_half
        change = float(np.max(np.abs(cand - u)))
        scale = max(1.0, float(np.max(np.abs(u))))
        u = cand
        history.append(e_new)
        if record_iterates:
            iterates.append(u.reshape(sub.grid.shape).copy())
        if change <= tol * scale:
            res = residual(u.reshape(shape))
            if res <= tol:
                return SampleSolution(
                    t_index, u.reshape(sub.grid.shape), it, history, res, True, damping0, tol,
                    eps, fallbacks, halvings, iterates,
                )
    res = residual(u.reshape(shape))
    diag = SampleSolution(
        t_index, u.reshape(sub.grid.shape), cfg.max_outer, history, res, False, damping0, tol,
        eps, fallbacks, halvings, iterates,
    )
    raise SolverError(
        f"sample {t_index}: no convergence in {cfg.max_outer} iterations (residual {res:.3e})",
        diag,
    )


@dataclass
class SolveReport:
    """Per-sample solutions and their probability-weighted statistics.

    ``samples[i]`` is ``None`` when sample ``i`` failed; its diagnostics
    are then in ``failures[i]``.
    """

    samples: list
    mean: Optional[np.ndarray]
    std: Optional[np.ndarray]
    residual_max: float
    failures: dict

    @property
    def passed(self) -> bool:
        return not self.failures

    def field(self) -> np.ndarray:
        """Solution of all samples stacked to the field shape."""
        return np.stack([s.u for s in self.samples])


def solve_ensemble(spec, p, v, m: ProductMeasureGrid, cfg: SolveConfig = SolveConfig()) -> SolveReport:
    """Solve every sample (in parallel) and aggregate mean and std fields."""

    def one(t):
        try:
            return solve_sample(spec, p, v, m, t, cfg), None
        except SolverError as exc:
            return None, exc

    with ThreadPoolExecutor(max_workers=thread_count(m.omega.m)) as pool:
        results = list(pool.map(one, range(m.omega.m)))
    samples = [r[0] for r in results]
    failures = {t: r[1] for t, r in enumerate(results) if r[1] is not None}
    residuals = [s.residual for s in samples if s is not None]
    residuals += [e.diagnostics.residual for e in failures.values() if e.diagnostics is not None]
    if failures:
        return SolveReport(samples, None, None, max(residuals, default=math.inf), failures)
    stack = np.stack([s.u for s in samples])
    probs = m.omega.probs.reshape((-1,) + (1,) * m.dim)
    mean = np.sum(probs * stack, axis=0)
    var = np.sum(probs * (stack - mean) ** 2, axis=0)
    return SolveReport(samples, mean, np.sqrt(var), max(residuals), {})


# --- diagnostics --------------------------------------------------------------------


@dataclass
class BracketConvergenceReport:
    """Monotonicity bracket and W^{1,p} distance to the final iterate."""

    brackets: list
    distances: list
    decreasing: bool


def bracket_convergence_diagnostic(spec, p, v, m: ProductMeasureGrid, t_index: int, iterates, window: int = 5):
    """Check that bracket and distance to the limit fall together along the iterates.

    ``iterates`` are spatial arrays from ``solve_sample(record_iterates=True)``;
    the last one is taken as the limit.
    """
    from .fields import StochasticField, gradient
    from .norms import luxemburg_norm

    spec_t, p_t, v_t, sub = _restrict(spec, p, v, m, t_index)
    final = iterates[-1][None]
    tail = iterates[-window - 1 : -1]
    brackets, distances = [], []
    for uk in tail:
        uk = uk[None]
        brackets.append(monotonicity_bracket(spec_t, uk, final, p_t, v_t, sub))
        diff = StochasticField(uk - final)
        distances.append(
            luxemburg_norm(diff, p_t, v_t, sub).value
            + luxemburg_norm(gradient(diff, sub), p_t, v_t, sub).value
        )

    def falling(seq):
        return all(b <= a * (1 + 1e-9) + 1e-300 for a, b in zip(seq[:-1], seq[1:]))

    return BracketConvergenceReport(brackets, distances, falling(brackets) and falling(distances))


@dataclass
class RefinementStudy:
    """Convergence table over nested grids.

    ``differences[k]`` is the max difference between levels ``k`` and
    ``k+1`` on the coarse nodes; ``errors`` (if an exact solution was given)
    are max nodal errors. ``exact_discrete`` marks errors at rounding
    level, for which no order can be fitted (``fitted_order`` is inf).
    """

    n: list
    h: list
    differences: list
    errors: Optional[list]
    orders: list
    fitted_order: float
    exact_discrete: bool
    residuals: list

    @property
    def differences_decreasing(self) -> bool:
        return all(b < a for a, b in zip(self.differences[:-1], self.differences[1:]))


def refine_study(
    factory: Callable, base_n: int, levels: int, cfg: SolveConfig = SolveConfig(),
    exact: Optional[Callable] = None, dim: int = 1, bounds=None, samples=(0.0,), probs=None,
    error_floor: float = 1e-11,
) -> RefinementStudy:
    """Solve on nested grids with ``(base_n - 1) * 2**k + 1`` nodes per axis.

    ``factory(m)`` returns ``(spec, p, v)`` for a grid ``m``; ``exact(m)``
    returns nodal values of the exact solution. The fitted order is the
    least-squares slope of log(error) against log(h), or of the
    successive differences when no exact solution is supplied.
    """
    if levels < 2:
        raise ValueError("a refinement study needs at least two levels")
    bounds = bounds or [(0.0, 1.0)] * dim
    ns, hs, sols, errs, residuals = [], [], [], [], []
    for k in range(levels):
        n = (base_n - 1) * 2**k + 1
        m = build_grid(dim, bounds, n, samples, probs)
        spec, p, v = factory(m)
        rep = solve_ensemble(spec, p, v, m, cfg)
        if not rep.passed:
            raise next(iter(rep.failures.values()))
        u = rep.field()
        ns.append(n)
        hs.append(max(m.grid.h))
        sols.append(u)
        residuals.append(rep.residual_max)
        if exact is not None:
            errs.append(float(np.max(np.abs(u - np.broadcast_to(exact(m), m.field_shape)))))
    step = (slice(None),) + (slice(None, None, 2),) * dim
    diffs = [float(np.max(np.abs(a - b[step]))) for a, b in zip(sols[:-1], sols[1:])]
    data = errs if exact is not None else diffs
    hh = hs if exact is not None else hs[:-1]
    exact_discrete = max(data) <= error_floor
    if exact_discrete:
        orders, fitted = [], math.inf
    elif len(data) >= 2 and min(data) > 0:
        orders = [math.log(a / b) / math.log(ha / hb) for a, b, ha, hb in zip(data[:-1], data[1:], hh[:-1], hh[1:])]
        fitted = float(np.polyfit(np.log(hh), np.log(data), 1)[0])
    else:
        orders, fitted = [], math.nan
    return RefinementStudy(
        ns, hs, diffs, errs if exact is not None else None, orders, fitted, exact_discrete, residuals
    )
