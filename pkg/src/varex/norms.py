"""Weighted variable-exponent modulars and Luxemburg norms."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fields import gradient
from .grid import ProductMeasureGrid

__all__ = [
    "NotInSpaceError",
    "NormResult",
    "modular",
    "luxemburg_norm",
    "luxemburg_root",
    "modular_values",
    "sobolev_norm",
    "Prop2Report",
    "check_prop2",
    "relative_slack",
]

MAX_DOUBLINGS = 200
MAX_BISECTIONS = 200


class NotInSpaceError(ValueError):
    """The modular is not finite: the field is outside the space at this resolution."""


@dataclass(frozen=True)
class NormResult:
    value: float
    modular_at_unit: float
    iterations: int
    bracket: tuple

    def __float__(self):
        return self.value


def _magnitude(u) -> np.ndarray:
    v = np.asarray(getattr(u, "values", u), dtype=float)
    if hasattr(u, "magnitude"):
        return u.magnitude()
    return np.abs(v)


def _exponent(p, shape) -> np.ndarray:
    return np.broadcast_to(np.asarray(getattr(p, "values", p), dtype=float), shape)


def _measure(v, m: ProductMeasureGrid) -> np.ndarray:
    """Quadrature weight times theta at every (sample, node)."""
    if v is None:
        return m.weights
    return m.weights * np.asarray(getattr(v, "values", v), dtype=float)


def modular_values(a, p, w) -> float:
    """Sum of ``w * a**p`` over flat arrays; ``inf`` on overflow."""
    with np.errstate(over="ignore", invalid="ignore"):
        total = float(np.sum(w * np.power(a, p)))
    if math.isnan(total):
        return math.inf
    return total


def modular(u, p, v, m: ProductMeasureGrid) -> float:
    """Weighted modular: integral of ``|u|**p * theta`` over the product measure.

    ``u`` may be a scalar field or a vector field (its Euclidean magnitude
    is used). Returns ``inf`` when the sum overflows.
    """
    a = _magnitude(u)
    m.check_shape(a)
    return modular_values(a, _exponent(p, a.shape), _measure(v, m))


def luxemburg_root(a, p, w, tol=1e-10, p_minus=None) -> NormResult:
    """Solve ``sum(w * (a/lam)**p) = 1`` for ``lam`` by bisection.

    ``a`` are nonnegative magnitudes, ``p >= 1`` exponents and ``w``
    nonnegative measure weights, all flat or broadcast-compatible. The map
    lam -> modular(a/lam) is strictly decreasing, so after bracketing the
    root by doubling/halving from ``max(1, rho)**(1/p_minus)`` plain
    bisection converges. The bracket is polished with one secant step in
    log-log coordinates, which is exact when ``p`` is constant.
    """
    a, p, w = (np.ravel(x) for x in np.broadcast_arrays(
        np.asarray(a, dtype=float), np.asarray(p, dtype=float), np.asarray(w, dtype=float)))
    keep = (a > 0) & (w > 0)
    if not keep.any():
        return NormResult(0.0, 0.0, 0, (0.0, 0.0))
    a, p, w = a[keep], p[keep], w[keep]
    if p_minus is None:
        p_minus = float(p.min())

    def rho(lam):
        return modular_values(a / lam, p, w)

    rho0 = rho(1.0)
    if not math.isfinite(rho0):
        raise NotInSpaceError("field not in space at this resolution")
    lam0 = max(1.0, rho0) ** (1.0 / p_minus)
    r0 = rho(lam0)
    if abs(r0 - 1.0) <= tol:
        return NormResult(lam0, r0, 0, (lam0, lam0))

    lo = hi = lam0
    r_lo = r_hi = r0
    steps = 0
    if r0 > 1.0:
        while r_hi > 1.0:
            lo, r_lo = hi, r_hi
            hi *= 2.0
            r_hi = rho(hi)
            steps += 1
            if steps > MAX_DOUBLINGS:
                raise NotInSpaceError("field not in space at this resolution")
    else:
        while r_lo < 1.0:
            hi, r_hi = lo, r_lo
            lo *= 0.5
            r_lo = rho(lo)
            steps += 1
            if steps > MAX_DOUBLINGS or lo == 0.0:
                raise NotInSpaceError("field not in space at this resolution")

    best, r_best = (lo, r_lo) if abs(r_lo - 1) < abs(r_hi - 1) else (hi, r_hi)
    iterations = 0
    while abs(r_best - 1.0) > tol and iterations < MAX_BISECTIONS:
        mid = 0.5 * (lo + hi)
        r_mid = rho(mid)
        iterations += 1
        if r_mid > 1.0:
            lo, r_lo = mid, r_mid
        else:
            hi, r_hi = mid, r_mid
        if abs(r_mid - 1.0) < abs(r_best - 1.0):
            best, r_best = mid, r_mid
        if hi - lo <= 1e-14 * mid:
            break

    if math.isfinite(r_lo) and r_lo > 1.0 > r_hi > 0.0 and hi > lo:
        llo, lhi = math.log(lo), math.log(hi)
        glo, ghi = math.log(r_lo), math.log(r_hi)
        cand = math.exp(llo - glo * (lhi - llo) / (ghi - glo))
        if lo <= cand <= hi:
            r_c = rho(cand)
            if abs(r_c - 1.0) <= abs(r_best - 1.0):
                best, r_best = cand, r_c
    return NormResult(best, r_best, iterations, (lo, hi))


def luxemburg_norm(u, p, v, m: ProductMeasureGrid, tol=1e-10) -> NormResult:
    """Luxemburg norm ``inf{lam > 0 : modular(u/lam) <= 1}``.

    The zero field has norm 0 without any root finding.

    Raises
    ------
    NotInSpaceError
        If the modular of ``u`` is not finite on this grid.
    """
    a = _magnitude(u)
    m.check_shape(a)
    p = _exponent(p, a.shape)
    return luxemburg_root(a, p, _measure(v, m), tol=tol, p_minus=float(np.min(p)))


def sobolev_norm(u, p, v, m: ProductMeasureGrid, seminorm=False) -> float:
    """First-order Sobolev norm ``||u|| + ||grad u||``.

    With ``seminorm=True`` only the gradient norm is returned, which is the
    norm used on the zero-trace subspace.
    """
    g = luxemburg_norm(gradient(u, m), p, v, m).value
    if seminorm:
        return g
    return luxemburg_norm(u, p, v, m).value + g


def relative_slack(lhs, rhs) -> float:
    """(rhs - lhs) scaled by the magnitude of the compared numbers."""
    return (rhs - lhs) / max(1.0, abs(lhs), abs(rhs))


@dataclass(frozen=True)
class Prop2Report:
    """Norm-modular bracketing.

    ``chain_large`` is ``(norm**p_minus, modular, norm**p_plus)`` and
    applies when the norm is at least 1; ``chain_small`` is
    ``(norm**p_plus, modular, norm**p_minus)`` for norms at most 1. At
    norm 1 both apply.
    """

    norm: float
    modular: float
    p_minus: float
    p_plus: float
    chain_large: tuple
    chain_small: tuple
    large_applies: bool
    small_applies: bool
    worst_slack: float
    passed: bool


def check_prop2(u, p, v, m: ProductMeasureGrid, slack=1e-9) -> Prop2Report:
    pv = _exponent(p, np.shape(_magnitude(u)))
    p_minus, p_plus = float(np.min(pv)), float(np.max(pv))
    res = luxemburg_norm(u, p, v, m)
    norm = res.value
    rho = modular(u, p, v, m)
    large = (norm**p_minus, rho, norm**p_plus)
    small = (norm**p_plus, rho, norm**p_minus)
    # bisection leaves the norm within tol of 1 for the boundary case
    near_one = abs(norm - 1.0) <= 1e-9
    large_applies = norm >= 1.0 or near_one
    small_applies = norm <= 1.0 or near_one
    slacks = []
    for applies, (lo, mid, hi) in ((large_applies, large), (small_applies, small)):
        if applies:
            slacks.append(relative_slack(lo, mid))
            slacks.append(relative_slack(mid, hi))
    worst = min(slacks)
    return Prop2Report(
        norm, rho, p_minus, p_plus, large, small, large_applies, small_applies,
        worst, worst >= -slack,
    )
