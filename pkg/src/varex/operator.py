"""The quasilinear operator, its weak pairing, and growth-condition probes.

The operator acts through the pairing

    <Gamma(u), phi> = E int_D [A(x,t,u,grad u) . grad phi + A0(x,t,u,grad u) phi] dx

discretized with linear elements: gradients are constant per element and
every integrand is evaluated once at the element centroid (values there
are vertex averages). The solver assembles exactly this pairing, so weak
residuals of discrete solutions vanish up to the linear-solve tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .expr import compile_expr
from .fields import (
    ExponentField,
    StochasticField,
    WeightField,
    evaluate,
    gradient,
)
from .grid import ProductMeasureGrid
from .norms import luxemburg_norm, luxemburg_root, modular_values

__all__ = [
    "ProblemSpec",
    "p_laplacian_problem",
    "custom_problem",
    "kernel_variables",
    "make_g",
    "ElementState",
    "element_state",
    "OperatorPairing",
    "pairing",
    "load_pairing",
    "residual_vector",
    "check_growth",
    "GrowthReport",
    "ConditionResult",
    "coercivity_probe",
    "CoercivityReport",
    "monotonicity_bracket",
    "boundedness_probe",
    "BoundednessReport",
]

MODEL_KINDS = ("p_laplacian_with_g", "custom")


def _v(x):
    return np.asarray(getattr(x, "values", x), dtype=float)


def make_g(spec) -> Callable:
    """Scalar function g(s) from a number, a formula in ``s`` or a callable."""
    if isinstance(spec, dict):
        spec = spec.get("formula", spec.get("value"))
    if callable(spec):
        return spec
    if isinstance(spec, str):
        ex = compile_expr(spec, ("s",))
        return lambda s: np.broadcast_to(np.asarray(ex(s=s), dtype=float), np.shape(s))
    value = float(spec)
    return lambda s: np.full(np.shape(s), value)


def _safe_pow(mag, e):
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        return np.where(mag > 0, np.power(mag, e), 0.0)


def _model_flux(s, xi, theta, p, x, t):
    mag = np.linalg.norm(xi, axis=-1)
    return (theta * _safe_pow(mag, p - 2.0))[..., None] * xi


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Data of the boundary value problem.

    ``flux(s, xi, theta, p, x, t)`` returns an array with the components
    of xi on the last axis; ``lower`` has the same signature and returns a
    scalar array. ``f``, ``gamma_fn`` and ``k_fn`` are nodal arrays of the
    field shape.
    """

    flux: Callable
    lower: Callable
    f: np.ndarray
    g: Callable
    gamma_fn: np.ndarray
    k_fn: np.ndarray
    alpha_c: float = 1.0
    beta_c: float = 1.0
    model_kind: str = "p_laplacian_with_g"
    g_zero: bool = False

    def __post_init__(self):
        if not (self.alpha_c > 0 and self.beta_c > 0):
            raise ValueError("alpha and beta must be positive")
        if self.model_kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.model_kind!r}")
        if np.min(self.k_fn) < 0:
            raise ValueError("k must be nonnegative")


def _common(m, f, g, gamma, k):
    fv, _ = evaluate(f, m)
    gv, _ = evaluate(gamma, m)
    kv, _ = evaluate(k, m)
    g_fn = make_g(g)
    g_zero = not callable(g) and not isinstance(g, (str, dict)) and float(g) == 0.0
    return fv, g_fn, gv, kv, g_zero


def p_laplacian_problem(m, f, g=0.0, gamma=0.0, k=0.0, alpha=1.0, beta=1.0) -> ProblemSpec:
    """Weighted p-Laplacian with lower-order term theta g(u) |grad u|^(p-1)."""
    fv, g_fn, gv, kv, g_zero = _common(m, f, g, gamma, k)

    def lower(s, xi, theta, p, x, t):
        mag = np.linalg.norm(xi, axis=-1)
        return theta * g_fn(s) * _safe_pow(mag, p - 1.0)

    return ProblemSpec(
        _model_flux, lower, fv, g_fn, gv, kv, float(alpha), float(beta),
        "p_laplacian_with_g", g_zero,
    )


def kernel_variables(dim: int) -> tuple:
    """Names available in custom kernel formulas."""
    return ("x", "y")[:dim] + ("t", "s") + ("xi1", "xi2")[:dim] + ("normxi", "theta", "p")


def custom_problem(m, f, flux, lower, g=0.0, gamma=0.0, k=0.0, alpha=1.0, beta=1.0):
    """Problem with expression kernels.

    ``flux`` is a list of ``dim`` formulas and ``lower`` one formula, over
    ``x``, ``y`` (2-D), ``t``, ``s``, ``xi1``, ``xi2`` (2-D), ``normxi``,
    ``theta`` and ``p``. Continuity in (s, xi) is assumed, not checked.
    """
    dim = m.dim
    names = kernel_variables(dim)
    if isinstance(flux, str) or len(flux) != dim:
        raise ValueError(f"flux needs {dim} component formulas")
    flux_ex = [compile_expr(src, names) for src in flux]
    lower_ex = compile_expr(lower, names)

    def env(s, xi, theta, p, x, t):
        out = {"t": t, "s": s, "theta": theta, "p": p}
        out["normxi"] = np.linalg.norm(xi, axis=-1)
        for i in range(dim):
            out[("x", "y")[i]] = x[i]
            out[("xi1", "xi2")[i]] = xi[..., i]
        return out

    def flux_fn(s, xi, theta, p, x, t):
        e = env(s, xi, theta, p, x, t)
        return np.stack([np.broadcast_to(ex(**e), s.shape) for ex in flux_ex], axis=-1)

    def lower_fn(s, xi, theta, p, x, t):
        e = env(s, xi, theta, p, x, t)
        return np.broadcast_to(np.asarray(lower_ex(**e), dtype=float), s.shape)

    fv, g_fn, gv, kv, g_zero = _common(m, f, g, gamma, k)
    return ProblemSpec(
        flux_fn, lower_fn, fv, g_fn, gv, kv, float(alpha), float(beta), "custom", g_zero
    )


# --- element-level evaluation -------------------------------------------------


@dataclass(frozen=True)
class ElementState:
    """Centroid values of a nodal field and its element gradient, per sample."""

    u: np.ndarray  # (m, ne)
    grad: np.ndarray  # (m, ne, d)


def _nodal(values, m):
    return np.asarray(values, dtype=float).reshape(m.omega.m, -1)


def element_state(u, m: ProductMeasureGrid) -> ElementState:
    mesh = m.grid.elements
    U = _nodal(_v(u), m)
    grads = np.stack([(G @ U.T).T for G in mesh.grad], axis=-1)
    return ElementState((mesh.centroid @ U.T).T, grads)


def element_values(values, m: ProductMeasureGrid) -> np.ndarray:
    """Centroid values ``(m, ne)`` of a nodal field (vertex average)."""
    arr = np.broadcast_to(_v(values), m.field_shape)
    return (m.grid.elements.centroid @ _nodal(arr, m).T).T


def element_weights(m: ProductMeasureGrid) -> np.ndarray:
    """Product-measure weight ``prob * |T|`` of each (sample, element)."""
    return m.omega.probs[:, None] * m.grid.elements.measure[None, :]


def _element_context(p, v, m):
    mesh = m.grid.elements
    theta = element_values(v if v is not None else 1.0, m)
    pe = element_values(p, m)
    x = tuple(np.broadcast_to(c, theta.shape) for c in mesh.centers)
    t = np.broadcast_to(m.omega.samples[:, None], theta.shape)
    return theta, pe, x, t


def _kernel(spec, state, theta, pe, x, t):
    with np.errstate(all="ignore"):
        a = spec.flux(state.u, state.grad, theta, pe, x, t)
        a0 = spec.lower(state.u, state.grad, theta, pe, x, t)
    return np.asarray(a, dtype=float), np.asarray(a0, dtype=float)


@dataclass(frozen=True)
class OperatorPairing:
    gamma1_part: float
    gamma2_part: float
    total: float


class NonFiniteIntegrand(ArithmeticError):
    pass


def _check_finite(arr, what, m):
    bad = ~np.isfinite(arr)
    if bad.any():
        idx = np.argwhere(bad)[0]
        raise NonFiniteIntegrand(f"{what} is not finite at sample {idx[0]}, element {idx[1]}")


def pairing(u, phi, spec: ProblemSpec, p, v, m: ProductMeasureGrid) -> OperatorPairing:
    """``<Gamma(u), phi>`` split into the flux part and the lower-order part."""
    theta, pe, x, t = _element_context(p, v, m)
    su = element_state(u, m)
    sphi = element_state(phi, m)
    a, a0 = _kernel(spec, su, theta, pe, x, t)
    w = element_weights(m)
    i1 = w * np.sum(a * sphi.grad, axis=-1)
    i2 = w * a0 * sphi.u
    _check_finite(i1, "flux integrand", m)
    _check_finite(i2, "lower-order integrand", m)
    g1 = float(np.sum(i1))
    g2 = float(np.sum(i2))
    return OperatorPairing(g1, g2, g1 + g2)


def load_pairing(spec: ProblemSpec, phi, m: ProductMeasureGrid) -> float:
    """``E int f phi`` with the same centroid quadrature as :func:`pairing`."""
    return float(np.sum(element_weights(m) * element_values(spec.f, m) * element_values(phi, m)))


def residual_vector(u, spec: ProblemSpec, p, v, m: ProductMeasureGrid) -> np.ndarray:
    """Nodal residual ``<Gamma(u) - f, hat_i>`` per sample, shape ``(m, N)``.

    Hat functions here are localized in the sample as well, so each row
    carries that sample's probability.
    """
    mesh = m.grid.elements
    theta, pe, x, t = _element_context(p, v, m)
    su = element_state(u, m)
    a, a0 = _kernel(spec, su, theta, pe, x, t)
    w = element_weights(m)
    fe = element_values(spec.f, m)
    out = ((w * (a0 - fe)) @ mesh.centroid)
    for k, G in enumerate(mesh.grad):
        out = out + (w * a[..., k]) @ G
    return np.asarray(out)


# --- growth conditions ----------------------------------------------------------


@dataclass
class ConditionResult:
    worst_slack: float
    checked: int
    failed: int
    witness: Optional[dict] = None

    @property
    def passed(self) -> bool:
        return self.failed == 0


@dataclass
class GrowthReport:
    """Sampled verification of the flux and lower-order growth conditions.

    Keys: ``"H3"`` flux bound, ``"H4"`` strict monotonicity, ``"H5"``
    coercivity of the flux, ``"A0"`` lower-order bound. Slacks are
    relative: ``(rhs - lhs) / max(|lhs|, |rhs|)`` (``H4`` reports the raw
    bracket).
    """

    conditions: dict
    n_draws: int
    seed: int

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.conditions.values())


def _rel(lhs, rhs):
    scale = np.maximum(np.maximum(np.abs(lhs), np.abs(rhs)), 1e-300)
    return (rhs - lhs) / scale


def _condition(slack, checked_mask, tol, witness_fn):
    slack = np.where(checked_mask, slack, np.inf)
    failed = checked_mask & (slack < tol)
    worst_idx = int(np.argmin(slack))
    witness = witness_fn(worst_idx) if failed.any() else None
    return ConditionResult(
        float(slack[worst_idx]) if checked_mask.any() else math.inf,
        int(checked_mask.sum()),
        int(failed.sum()),
        witness,
    )


def check_growth(
    spec: ProblemSpec, p, v, m: ProductMeasureGrid, n_draws: int = 10_000, seed: int = 42,
    tol: float = -1e-12, skip: float = 1e-8, coincident: int = 0,
) -> GrowthReport:
    """Check the growth conditions at random (node, sample, s, xi, mu) tuples.

    ``xi`` and ``mu`` get uniformly random directions and log-uniform
    magnitudes in [1e-3, 1e3]; ``s`` is standard normal times a
    log-uniform scale. Pairs with ``|xi - mu| < skip`` are excluded from the
    strict monotonicity test; ``coincident`` extra draws with ``mu = xi``
    exercise that rule.
    """
    rng = np.random.default_rng(seed)
    d = m.dim
    n_draws = int(n_draws) + int(coincident)
    flat = int(np.prod(m.field_shape))
    idx = rng.integers(0, flat, size=n_draws)

    def at(arr):
        return np.broadcast_to(_v(arr), m.field_shape).reshape(-1)[idx]

    theta = at(v if v is not None else 1.0)
    pv = at(p)
    kv = at(spec.k_fn)
    gam = at(spec.gamma_fn)
    xs = tuple(c.reshape(-1)[idx] for c in m.x)
    t = m.t.reshape(-1)[idx]
    s = rng.standard_normal(n_draws) * 10.0 ** rng.uniform(-2, 2, n_draws)

    def vec():
        dirs = rng.standard_normal((n_draws, d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        return dirs * (10.0 ** rng.uniform(-3, 3, n_draws))[:, None]

    xi, mu = vec(), vec()
    if coincident:
        mu[-int(coincident):] = xi[-int(coincident):]

    with np.errstate(all="ignore"):
        a_xi = spec.flux(s, xi, theta, pv, xs, t)
        a_mu = spec.flux(s, mu, theta, pv, xs, t)
        a0 = spec.lower(s, xi, theta, pv, xs, t)
    qv = pv / (pv - 1.0)
    mag = np.linalg.norm(xi, axis=1)
    everywhere = np.ones(n_draws, dtype=bool)

    def witness(extra):
        def make(i):
            out = {
                "flat_index": int(idx[i]),
                "s": float(s[i]),
                "xi": [float(c) for c in xi[i]],
                "theta": float(theta[i]),
                "p": float(pv[i]),
            }
            out.update({k: float(val[i]) for k, val in extra.items()})
            return out

        return make

    lhs3 = np.linalg.norm(a_xi, axis=1)
    rhs3 = spec.beta_c * theta ** (1.0 / pv) * (kv + theta ** (1.0 / qv) * mag ** (pv - 1.0))
    h3 = _condition(_rel(lhs3, rhs3), everywhere, tol, witness({"lhs": lhs3, "rhs": rhs3}))

    diff = xi - mu
    bracket = np.sum((a_xi - a_mu) * diff, axis=1)
    distinct = np.linalg.norm(diff, axis=1) >= skip
    h4 = _condition(bracket, distinct, 0.0, witness({"bracket": bracket}))
    # strict inequality: a zero bracket fails
    zero = distinct & (bracket <= 0.0)
    h4.failed = int(zero.sum())
    if h4.failed and h4.witness is None:
        h4.witness = witness({"bracket": bracket})(int(np.argmax(zero)))

    lhs5 = np.sum(a_xi * xi, axis=1)
    rhs5 = spec.alpha_c * theta * mag**pv
    h5 = _condition(_rel(rhs5, lhs5), everywhere, tol, witness({"lhs": lhs5, "rhs": rhs5}))

    lhs0 = np.abs(a0)
    rhs0 = gam + spec.g(s) * theta * mag ** (pv - 1.0)
    c0 = _condition(_rel(lhs0, rhs0), everywhere, tol, witness({"lhs": lhs0, "rhs": rhs0}))

    return GrowthReport({"H3": h3, "H4": h4, "H5": h5, "A0": c0}, n_draws, seed)


# --- coercivity, monotonicity, boundedness ------------------------------------------


@dataclass
class CoercivityReport:
    """``ratio[i] = <Gamma(c u0), c u0> / ||grad(c u0)||`` at ``scales[i]``.

    ``fitted_r`` is one plus the least-squares slope of log(ratio) against
    log(||grad(c u0)||), so that ``<Gamma(u), u>`` grows like
    ``||grad u||**fitted_r``.
    """

    scales: list
    grad_norms: list
    ratios: list
    fitted_r: float
    increasing: bool
    passed: bool


def coercivity_probe(spec, p, v, m: ProductMeasureGrid, u0, scales) -> CoercivityReport:
    scales = [float(c) for c in scales]
    if len(scales) < 2:
        raise ValueError("need at least two scales to fit a growth exponent")
    if any(b <= a for a, b in zip(scales[:-1], scales[1:])) or scales[0] <= 0:
        raise ValueError("scales must be positive and increasing")
    base = _v(u0)
    norms, ratios = [], []
    for c in scales:
        uc = StochasticField(c * base)
        gn = luxemburg_norm(gradient(uc, m), p, v, m).value
        if gn == 0.0:
            raise ValueError("u0 has zero gradient")
        norms.append(gn)
        ratios.append(pairing(uc, uc, spec, p, v, m).total / gn)
    top = ratios[len(ratios) // 2 :]
    increasing = all(b > a for a, b in zip(top[:-1], top[1:]))
    if min(ratios) <= 0:
        slope = -math.inf
    else:
        slope = float(np.polyfit(np.log(norms), np.log(ratios), 1)[0])
    return CoercivityReport(
        scales, norms, ratios, 1.0 + slope, increasing, increasing and slope > 0
    )


def monotonicity_bracket(spec, u1, u2, p, v, m: ProductMeasureGrid) -> float:
    """``E int [A(u1, grad u1) - A(u1, grad u2)] . grad(u1 - u2)``."""
    theta, pe, x, t = _element_context(p, v, m)
    s1 = element_state(u1, m)
    s2 = element_state(u2, m)
    with np.errstate(all="ignore"):
        a1 = spec.flux(s1.u, s1.grad, theta, pe, x, t)
        a2 = spec.flux(s1.u, s2.grad, theta, pe, x, t)
    integrand = np.sum((a1 - a2) * (s1.grad - s2.grad), axis=-1)
    return float(np.sum(element_weights(m) * integrand))


@dataclass
class BoundednessReport:
    """Operator bound ``|<Gamma u, phi>| <= C (C1 + rho(grad u))**theta ||grad phi||``.

    ``flux_derived`` counts violations of the flux-part bound with the
    constant that follows from the flux growth condition; ``violations``
    counts hold-out violations of the calibrated bound for the full
    operator.
    """

    c1: float
    calibrated: float
    violations: int
    flux_violations: int
    n_calibration: int
    n_holdout: int
    thetas: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.violations == 0 and self.flux_violations == 0


def _bound_terms(spec, u, phi, p, v, m):
    """Quantities of the operator bound, all with element quadrature."""
    theta, pe, x, t = _element_context(p, v, m)
    su = element_state(u, m)
    sphi = element_state(phi, m)
    a, a0 = _kernel(spec, su, theta, pe, x, t)
    w = element_weights(m)
    qe = pe / (pe - 1.0)
    dual_w = w * theta ** (1.0 - qe)
    n_a = luxemburg_root(np.linalg.norm(a, axis=-1), qe, dual_w).value
    q_minus, q_plus = float(qe.min()), float(qe.max())
    th = 1.0 / q_minus if n_a >= 1.0 else 1.0 / q_plus
    grad_u = np.linalg.norm(su.grad, axis=-1)
    rho = modular_values(grad_u, pe, w * theta)
    n_phi = luxemburg_root(np.linalg.norm(sphi.grad, axis=-1), pe, w * theta).value
    g1 = float(np.sum(w * np.sum(a * sphi.grad, axis=-1)))
    g2 = float(np.sum(w * a0 * sphi.u))
    return g1, g2, rho, th, n_phi, (q_minus, q_plus)


def boundedness_probe(
    spec, p, v, m: ProductMeasureGrid, calibration, holdout, safety: float = 2.0
) -> BoundednessReport:
    """Calibrate and validate the operator bound on (u, phi) pairs.

    ``C1`` is the k-modular plus the dual-weighted gamma-modular. The flux
    part is also checked against the constant implied by the flux growth
    bound, the Hölder inequality and the norm-modular bracketing.
    """
    pv = np.broadcast_to(_v(p), m.field_shape)
    qv = pv / (pv - 1.0)
    th_nodes = np.broadcast_to(_v(v if v is not None else 1.0), m.field_shape)
    c1 = modular_values(_v(spec.k_fn), qv, m.weights) + modular_values(
        np.abs(_v(spec.gamma_fn)), qv, m.weights * th_nodes ** (1.0 - qv)
    )
    qe = element_values(qv, m)
    q_minus, q_plus = float(qe.min()), float(qe.max())
    c_holder = 1.0 + 1.0 / float(element_values(pv, m).min()) - 1.0 / float(
        element_values(pv, m).max()
    )
    beta = spec.beta_c
    growth = max(beta**q_minus, beta**q_plus)
    if np.any(_v(spec.k_fn) > 0):
        growth *= 2.0 ** (q_plus - 1.0)
    ek = element_values(spec.k_fn, m)
    k_mod = modular_values(ek, element_values(qv, m), element_weights(m))

    def ratio(u, phi):
        g1, g2, rho, th, n_phi, _ = _bound_terms(spec, u, phi, p, v, m)
        denom = (c1 + rho) ** th * n_phi
        flux_bound = c_holder * (growth * (k_mod + rho)) ** th * n_phi
        flux_ok = abs(g1) <= flux_bound * (1.0 + 1e-9) + 1e-300
        return (abs(g1 + g2) / denom if denom > 0 else 0.0), flux_ok, th

    cal = [ratio(u, phi) for u, phi in calibration]
    c = safety * max(r[0] for r in cal)
    violations = 0
    flux_bad = sum(1 for r in cal if not r[1])
    thetas = []
    for u, phi in holdout:
        r, ok, th = ratio(u, phi)
        thetas.append(th)
        if r > c * (1.0 + 1e-9):
            violations += 1
        if not ok:
            flux_bad += 1
    return BoundednessReport(c1, c, violations, flux_bad, len(cal), len(holdout), thetas)
