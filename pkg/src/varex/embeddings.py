"""Embedding exponents and numerical checks of the functional inequalities.

Every check returns a small report object holding both sides of the
inequality, the constant used, and a pass flag. Where an inequality only
asserts that *some* constant exists, the constant used is derived from the
Hölder inequality and the norm-modular bracketing, both of which hold for
any positive discrete measure, so the checks are exact statements about
the grid measure rather than asymptotic ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .fields import (
    AuxExponentField,
    DomainError,
    ExponentField,
    StochasticField,
    WeightField,
    conjugate_exponent,
    conjugate_weight,
    gradient,
    validate_weight,
)
from .grid import ProductMeasureGrid, integrate
from .norms import luxemburg_norm, luxemburg_root, modular, relative_slack

__all__ = [
    "HypothesisViolation",
    "EmbeddingExponents",
    "critical_exponents",
    "holder_constant",
    "HolderReport",
    "check_holder",
    "poincare_ratio",
    "empirical_poincare_constant",
    "ChainReport",
    "check_embedding_chain",
    "ChainSuiteReport",
    "embedding_chain_suite",
    "L1LocReport",
    "check_l1loc_bound",
    "WeightedPowerReport",
    "check_weighted_power_bound",
    "WeakConvergenceReport",
    "weak_convergence_panel",
]

SLACK = 1e-9


class HypothesisViolation(ValueError):
    """The hypotheses of the inequality being checked do not hold."""


def _v(x):
    return np.asarray(getattr(x, "values", x), dtype=float)


@dataclass(frozen=True)
class EmbeddingExponents:
    """Pointwise critical exponents.

    ``p_star`` and ``p_s_star`` use ``inf`` where the exponent reaches the
    dimension (for ``p_s_star`` any value is admissible there; ``inf`` is
    the sentinel). ``alpha0`` and ``r`` are only set when a weight
    exponent ``alpha`` (and a target ``q``) is supplied.
    """

    p_star: np.ndarray
    p_s: np.ndarray
    p_s_star: np.ndarray
    alpha: Optional[np.ndarray] = None
    alpha0: Optional[np.ndarray] = None
    r: Optional[np.ndarray] = None
    admissible_q: Optional[bool] = None


def critical_exponents(p, s, d: int, alpha=None, q=None) -> EmbeddingExponents:
    if d < 1:
        raise ValueError("dimension must be at least 1")
    pv, sv = np.broadcast_arrays(_v(p), _v(s))
    with np.errstate(divide="ignore", invalid="ignore"):
        p_star = np.where(pv < d, d * pv / (d - pv), np.inf)
        p_s = pv * sv / (sv + 1.0)
        p_s_star = np.where(p_s < d, d * p_s / (d * (sv + 1.0) - pv * sv), np.inf)
    alpha_v = alpha0 = r = admissible = None
    if alpha is not None:
        alpha_v = np.broadcast_to(_v(alpha), pv.shape)
        if np.min(alpha_v) <= 1.0:
            raise DomainError("weight exponent alpha must exceed 1")
        alpha0 = alpha_v / (alpha_v - 1.0)
        if q is not None:
            qv = np.broadcast_to(_v(q), pv.shape)
            r = alpha0 * qv
            admissible = bool(np.all((qv > 1.0) & (qv < p_star / alpha0)))
    return EmbeddingExponents(p_star, p_s, p_s_star, alpha_v, alpha0, r, admissible)


def holder_constant(p) -> float:
    """1 + 1/p_minus - 1/p_plus, i.e. 1/p_minus + 1/q_minus."""
    pv = _v(p)
    return 1.0 + 1.0 / float(np.min(pv)) - 1.0 / float(np.max(pv))


@dataclass(frozen=True)
class HolderReport:
    lhs: float
    rhs: float
    constant: float
    norm_f: float
    norm_g: float
    passed: bool


def check_holder(f, g, p, v, m: ProductMeasureGrid) -> HolderReport:
    """Weighted Hölder inequality for f in the (p, theta) space and g in the dual space."""
    v = WeightField.unit(m) if v is None else v
    q = conjugate_exponent(p)
    v_dual = conjugate_weight(v, p)
    nf = luxemburg_norm(f, p, v, m).value
    ng = luxemburg_norm(g, q, v_dual, m).value
    if not (math.isfinite(nf) and math.isfinite(ng)):
        raise HypothesisViolation("Hölder check needs finite norms")
    lhs = integrate(np.abs(_v(f) * _v(g)), m)
    c = holder_constant(p)
    rhs = c * nf * ng
    return HolderReport(lhs, rhs, c, nf, ng, relative_slack(lhs, rhs) >= -SLACK)


def _require_zero_boundary(u, m):
    vals = _v(u)
    mask = np.broadcast_to(m.grid.boundary_mask, vals.shape)
    scale = max(1.0, float(np.max(np.abs(vals))))
    if np.max(np.abs(vals[mask])) > 1e-12 * scale:
        raise HypothesisViolation("field must vanish on the boundary")


def poincare_ratio(u, p, v, m: ProductMeasureGrid) -> float:
    """Ratio ``||u|| / ||grad u||`` for a field vanishing on the boundary."""
    _require_zero_boundary(u, m)
    den = luxemburg_norm(gradient(u, m), p, v, m).value
    if den == 0.0:
        raise HypothesisViolation("gradient vanishes identically; ratio undefined")
    return luxemburg_norm(u, p, v, m).value / den


def empirical_poincare_constant(family, p, v, m: ProductMeasureGrid):
    """Largest Poincaré ratio over a family; returns ``(sup, ratios)``."""
    ratios = [poincare_ratio(u, p, v, m) for u in family]
    return max(ratios), ratios


# --- embedding chain -------------------------------------------------------


@dataclass(frozen=True)
class ChainInequality:
    """``lhs <= constant * base``; ``derived`` is the constant the proof provides."""

    lhs: float
    base: float
    derived: Optional[float]

    @property
    def ratio(self) -> float:
        if self.base == 0.0:
            return 0.0 if self.lhs == 0.0 else math.inf
        return self.lhs / self.base

    def holds(self, constant) -> bool:
        return relative_slack(self.lhs, constant * self.base) >= -SLACK


@dataclass(frozen=True)
class ChainReport:
    """Both sides of the four chain inequalities for one field.

    Keys of ``inequalities``: ``"modular"`` (gradient modular bound),
    ``"power"`` (norm power bound), ``"gradient"`` (gradient norm bound
    with exponent gamma4/(gamma1*gamma3)) and ``"lebesgue"`` (the plain
    embedding of the weighted space into the p_s space).
    """

    gammas: tuple
    rho_weight: float
    inequalities: dict

    def ratios(self) -> dict:
        return {k: ineq.ratio for k, ineq in self.inequalities.items()}

    @property
    def passed_derived(self) -> bool:
        return all(
            ineq.derived is None or ineq.holds(ineq.derived)
            for ineq in self.inequalities.values()
        )


def _chain_h2(v, p, s, m):
    flag = getattr(v, "h2_ok", None)
    if flag is None:
        flag = validate_weight(v, p, s, m).h2_ok
    if not flag:
        raise HypothesisViolation("theta^(-s) is not integrable; the chain does not apply")


def check_embedding_chain(u, p, s, v, m: ProductMeasureGrid, h2_ok=None) -> ChainReport:
    """Evaluate the chain embedding the weighted space into the p_s space.

    The gammas follow the four case rules: each picks the lower or upper
    bound of its exponent according to whether the governing norm is at
    least 1 or at most 1.
    """
    if h2_ok is None:
        _chain_h2(v, p, s, m)
    elif not h2_ok:
        raise HypothesisViolation("theta^(-s) is not integrable; the chain does not apply")
    pv, sv, th = _v(p), _v(s), _v(v)
    pv, sv = np.broadcast_to(pv, m.field_shape), np.broadcast_to(sv, m.field_shape)
    p_s = pv * sv / (sv + 1.0)
    ratio_exp = (sv + 1.0) / sv
    grad = gradient(u, m).magnitude()

    big_f = grad**p_s * th ** (p_s / pv)
    n_f = luxemburg_norm(big_f, ratio_exp, None, m).value
    inv = th ** (-sv / (sv + 1.0))
    n_inv = luxemburg_norm(inv, sv + 1.0, None, m).value
    g1 = float(np.min(ratio_exp)) if n_f >= 1.0 else float(np.max(ratio_exp))
    g2 = float(np.min(sv)) + 1.0 if n_inv >= 1.0 else float(np.max(sv)) + 1.0

    n_grad_ps = luxemburg_norm(grad, p_s, None, m).value
    n_grad_p = luxemburg_norm(grad, pv, th, m).value
    g3 = float(np.min(p_s)) if n_grad_ps >= 1.0 else float(np.max(p_s))
    g4 = float(np.max(pv)) if n_grad_p >= 1.0 else float(np.min(pv))

    rho_p = modular(grad, pv, th, m)
    rho_w = integrate(th ** (-sv), m)
    c_holder = holder_constant(ratio_exp)
    c1 = rho_w ** (1.0 / g2)

    lhs_mod = modular(grad, p_s, None, m)
    ineqs = {
        "modular": ChainInequality(lhs_mod, rho_p ** (1.0 / g1) * c1, c_holder),
        "power": ChainInequality(n_grad_ps**g3, c1 * n_grad_p ** (g4 / g1), c_holder),
        "gradient": ChainInequality(
            n_grad_ps, n_grad_p ** (g4 / (g1 * g3)), (c_holder * c1) ** (1.0 / g3)
        ),
    }
    c_low = float(np.min(th))
    measure = integrate(np.ones(m.field_shape), m)
    c_leb = (1.0 + measure) ** (1.0 / float(np.min(p_s))) * max(
        1.0, c_low ** (-1.0 / float(np.min(pv)))
    )
    ineqs["lebesgue"] = ChainInequality(
        luxemburg_norm(u, p_s, None, m).value, luxemburg_norm(u, pv, th, m).value, c_leb
    )
    return ChainReport((g1, g2, g3, g4), rho_w, ineqs)


@dataclass
class ChainSuiteReport:
    """Calibration on one family, validation on a hold-out family.

    ``calibrated[k]`` is ``safety`` times the largest ratio lhs/base seen
    on the calibration family for inequality ``k``.
    """

    calibrated: dict
    derived_max: dict
    violations: dict
    derived_violations: int
    n_calibration: int
    n_holdout: int
    holdout_ratios: dict = field(repr=False, default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.derived_violations == 0 and not any(self.violations.values())


def embedding_chain_suite(
    calibration, holdout, p, s, v, m: ProductMeasureGrid, safety: float = 2.0
) -> ChainSuiteReport:
    _chain_h2(v, p, s, m)
    cal = [check_embedding_chain(u, p, s, v, m, h2_ok=True) for u in calibration]
    keys = list(cal[0].inequalities)
    calibrated = {k: safety * max(r.inequalities[k].ratio for r in cal) for k in keys}
    violations = dict.fromkeys(keys, 0)
    ratios = {k: [] for k in keys}
    derived_max = dict.fromkeys(keys, 0.0)
    derived_bad = 0
    for u in holdout:
        rep = check_embedding_chain(u, p, s, v, m, h2_ok=True)
        for k, ineq in rep.inequalities.items():
            ratios[k].append(ineq.ratio)
            if not ineq.holds(calibrated[k]):
                violations[k] += 1
            if ineq.derived is not None:
                derived_max[k] = max(derived_max[k], ineq.derived)
        if not rep.passed_derived:
            derived_bad += 1
    for r in cal:
        if not r.passed_derived:
            derived_bad += 1
    return ChainSuiteReport(
        calibrated, derived_max, violations, derived_bad, len(cal), len(holdout), ratios
    )


# --- L1_loc embedding --------------------------------------------------------


@dataclass(frozen=True)
class L1LocReport:
    lhs: float
    rhs: float
    constant: float
    dual_integral: float
    dual_modular: float
    passed: bool


def check_l1loc_bound(u, p, v, m: ProductMeasureGrid, box) -> L1LocReport:
    """Local L1 bound on a closed sub-box ``K``.

    Checks ``int_K |u| <= A_K * ||u theta^(1/p)||_{p,K} * ||theta^(-1/p)||_{q,K}``
    with ``A_K`` the Hölder constant of p restricted to K, and reports
    ``int_K theta^(-1/(p-1))`` next to the q-modular of theta^(-1/p) on K
    (the two coincide).
    """
    mask = np.ones(m.grid.shape, dtype=bool)
    for axis, (lo, hi) in enumerate(box):
        c = m.grid.mesh[axis]
        mask &= (c >= lo - 1e-12) & (c <= hi + 1e-12)
    if not mask.any():
        raise ValueError("sub-box contains no grid nodes")
    w = m.weights * mask
    pv = np.broadcast_to(_v(p), m.field_shape)
    th = np.broadcast_to(_v(v), m.field_shape)
    qv = pv / (pv - 1.0)
    a = np.abs(_v(u))
    lhs = float(np.sum(w * a))
    pk = pv[np.broadcast_to(mask, pv.shape)]
    a_k = 1.0 + 1.0 / float(pk.min()) - 1.0 / float(pk.max())
    n1 = luxemburg_root(a * th ** (1.0 / pv), pv, w).value
    dual = th ** (-1.0 / pv)
    n2 = luxemburg_root(dual, qv, w).value
    b_k = float(np.sum(w * th ** (-1.0 / (pv - 1.0))))
    rho_q = float(np.sum(w * dual**qv))
    rhs = a_k * n1 * n2
    return L1LocReport(lhs, rhs, a_k, b_k, rho_q, relative_slack(lhs, rhs) >= -SLACK)


# --- weighted power bound -----------------------------------------------------


@dataclass(frozen=True)
class WeightedPowerReport:
    lhs: float
    rhs: float
    constant: float
    norm_weight: float
    norm_power: float
    passed: bool


def check_weighted_power_bound(u, q, alpha, v, m: ProductMeasureGrid) -> WeightedPowerReport:
    """``int theta |u|^q <= C ||theta||_alpha || |u|^q ||_{alpha0}``.

    ``alpha0 = alpha/(alpha-1)`` and C is the Hölder constant of
    ``alpha``. This is the bound that carries convergence in the
    ``r = alpha0 q`` space over to the weighted q space.
    """
    qv = np.broadcast_to(_v(q), m.field_shape)
    av = np.broadcast_to(_v(alpha), m.field_shape)
    if np.min(av) <= 1.0:
        raise DomainError("alpha must exceed 1")
    a0 = av / (av - 1.0)
    lhs = modular(u, qv, v, m)
    n_w = luxemburg_norm(_v(v) * np.ones(m.field_shape), av, None, m).value
    n_u = luxemburg_norm(np.abs(_v(u)) ** qv, a0, None, m).value
    c = holder_constant(av)
    rhs = c * n_w * n_u
    return WeightedPowerReport(lhs, rhs, c, n_w, n_u, relative_slack(lhs, rhs) >= -SLACK)


# --- weak convergence panel --------------------------------------------------


@dataclass
class WeakConvergenceReport:
    """Pairings of a sequence against dual test functions.

    ``pairings[j][k]`` is the pairing of the k-th sequence element with
    the j-th dual; ``limits[j]`` the pairing of the limit.
    """

    norms: list
    dual_norms: list
    pairings: list
    limits: list
    exceptional_measure: float
    converged: list
    passed: bool


def _monotone_tail(values, rel=1e-12):
    vals = np.asarray(values, dtype=float)
    tail = vals[len(vals) // 2 :]
    scale = max(1.0, float(np.max(np.abs(tail)))) if tail.size else 1.0
    return bool(np.all(np.diff(tail) <= rel * scale))


def weak_convergence_panel(
    seq,
    u,
    duals,
    p,
    v,
    m: ProductMeasureGrid,
    *,
    bound: Optional[float] = None,
    pointwise_tol: float = 1e-8,
    exceptional_measure: Optional[float] = None,
    pairing_tol: float = 1e-3,
):
    """Check that a bounded, a.e. convergent sequence converges weakly.

    Preconditions (violations raise :class:`HypothesisViolation`):

    * the norms of the sequence are finite and bounded: by ``bound`` when
      given, otherwise the sup over the second half may not exceed twice
      the sup over the first half;
    * pointwise convergence on the grid: at every node the error
      ``|u_k - u|`` is below ``pointwise_tol`` at the last index, or it
      is non-increasing over the second half of the sequence and still
      shrinking. Nodes failing this form the exceptional set, whose
      product measure may not exceed ``exceptional_measure`` (default 1%
      of the total measure).

    For each dual the pairing ``int u_k g`` must approach the limit
    pairing to within ``pairing_tol`` with a non-increasing gap over the
    second half of the sequence.
    """
    seq = list(seq)
    if len(seq) < 2:
        raise ValueError("need at least two sequence elements")
    v = WeightField.unit(m) if v is None else v
    norms = [luxemburg_norm(un, p, v, m).value for un in seq]
    if not all(math.isfinite(n) for n in norms):
        raise HypothesisViolation("sequence norms are not finite")
    half = len(norms) // 2
    if bound is not None:
        unbounded = max(norms) > bound
    else:
        unbounded = max(norms[half:]) > 2.0 * max(norms[:half])
    if unbounded:
        raise HypothesisViolation("sequence norms are not bounded")

    target = _v(u)
    errs = np.stack([np.abs(_v(un) - target) for un in seq])
    final = errs[-1]
    tail = errs[half:]
    scale = max(1.0, float(np.max(np.abs(target))))
    shrinking = np.all(np.diff(tail, axis=0) <= 1e-12 * scale, axis=0) & (final < tail[0])
    ok = (final <= pointwise_tol) | shrinking
    bad = float(np.sum(m.weights[~ok]))
    allowed = (
        0.01 * float(np.sum(m.weights)) if exceptional_measure is None else exceptional_measure
    )
    if bad > allowed:
        raise HypothesisViolation(
            f"sequence does not converge pointwise on the grid "
            f"(non-convergent set has measure {bad:.3g} > {allowed:.3g})"
        )

    q = conjugate_exponent(p)
    v_dual = conjugate_weight(v, p)
    dual_norms, pairings, limits, converged = [], [], [], []
    for g in duals:
        dual_norms.append(luxemburg_norm(g, q, v_dual, m).value)
        gv = _v(g)
        pk = [integrate(_v(un) * gv, m) for un in seq]
        lim = integrate(target * gv, m)
        gaps = [abs(x - lim) for x in pk]
        pairings.append(pk)
        limits.append(lim)
        converged.append(gaps[-1] <= pairing_tol and _monotone_tail(gaps))
    if not all(math.isfinite(n) for n in dual_norms):
        raise HypothesisViolation("dual test function has infinite dual norm")
    return WeakConvergenceReport(
        norms, dual_norms, pairings, limits, bad, converged, all(converged)
    )
