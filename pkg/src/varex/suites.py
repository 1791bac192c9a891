"""Randomized and panel suites over the inequality checks.

Each suite returns a :class:`SuiteResult`: one row per checked case with
both sides of the inequality, plus a summary dictionary. Random draws come
from ``numpy.random.default_rng(seed)`` in a fixed order, so results are
reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .embeddings import (
    HypothesisViolation,
    check_holder,
    embedding_chain_suite,
    poincare_ratio,
    weak_convergence_panel,
)
from .expr import compile_expr
from .fields import WeightField, evaluate
from .grid import ProductMeasureGrid
from .norms import check_prop2, modular, relative_slack
from .random_fields import random_exponent, random_weight, smooth_field

__all__ = [
    "SuiteRow",
    "SuiteResult",
    "holder_suite",
    "prop2_suite",
    "poincare_suite",
    "chain_suite",
    "weakconv_suite",
    "SUITES",
]


@dataclass(frozen=True)
class SuiteRow:
    suite: str
    case_id: str
    lhs: float
    rhs: float
    passed: bool


@dataclass
class SuiteResult:
    suite: str
    rows: list
    summary: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.rows) and all(r.passed for r in self.rows)

    @property
    def n_failed(self) -> int:
        return sum(not r.passed for r in self.rows)


def _scaled(rng, arr):
    return arr * 10.0 ** rng.uniform(-3, 3)


def holder_suite(m: ProductMeasureGrid, draws=1000, seed=42) -> SuiteResult:
    """Weighted Hölder inequality on random (f, g, p, theta)."""
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(draws):
        p = random_exponent(rng, m)
        v = WeightField(random_weight(rng, m))
        f = _scaled(rng, smooth_field(rng, m))
        g = _scaled(rng, smooth_field(rng, m))
        rep = check_holder(f, g, p, v, m)
        rows.append(SuiteRow("holder", f"case-{i}", rep.lhs, rep.rhs, rep.passed))
    return SuiteResult("holder", rows, {"draws": draws})


def prop2_suite(m: ProductMeasureGrid, draws=1000, seed=42, slack=1e-9, unit_tol=1e-8) -> SuiteResult:
    """Norm-modular bracketing on random (u, p, theta).

    Each draw contributes a row for the tightest bracketing inequality
    and a row for the unit-modular identity ``rho(u/||u||) = 1``. A final
    row checks the boundary case of a field rescaled to norm exactly 1.
    """
    rng = np.random.default_rng(seed)
    rows = []
    worst_unit = 0.0
    last = None
    for i in range(draws):
        p = random_exponent(rng, m)
        v = random_weight(rng, m)
        u = _scaled(rng, smooth_field(rng, m))
        rep = check_prop2(u, p, v, m, slack=slack)
        pairs = []
        if rep.large_applies:
            lo, mid, hi = rep.chain_large
            pairs += [(lo, mid), (mid, hi)]
        if rep.small_applies:
            lo, mid, hi = rep.chain_small
            pairs += [(lo, mid), (mid, hi)]
        lhs, rhs = min(pairs, key=lambda ab: relative_slack(*ab))
        rows.append(SuiteRow("prop2", f"case-{i}", lhs, rhs, rep.passed))
        unit = modular(u / rep.norm, p, v, m)
        dev = abs(unit - 1.0)
        worst_unit = max(worst_unit, dev)
        rows.append(SuiteRow("prop2", f"case-{i}/unit", dev, unit_tol, dev <= unit_tol))
        last = (u / rep.norm, p, v)
    if last is not None:
        u1, p, v = last
        rep = check_prop2(u1, p, v, m, slack=slack)
        dev = abs(rep.modular - 1.0)
        rows.append(SuiteRow("prop2", "boundary", dev, unit_tol, dev <= unit_tol and rep.passed))
    return SuiteResult("prop2", rows, {"draws": draws, "unit_modular_max_deviation": worst_unit})


def _sine_family(m, k_max):
    out = []
    for k in range(1, k_max + 1):
        val = np.ones(m.field_shape)
        for i, (lo, hi) in enumerate(m.grid.bounds):
            val = val * np.sin(k * np.pi * (m.x[i] - lo) / (hi - lo))
        val[np.broadcast_to(m.grid.boundary_mask, val.shape)] = 0.0
        out.append(val)
    return out


def poincare_suite(m: ProductMeasureGrid, p=2.0, v=None, k_max=6) -> SuiteResult:
    """Poincaré ratios ``||u|| / ||grad u||`` over ``sin(k pi x)`` modes.

    Row ``k`` compares the ratio for mode ``k`` (lhs) with the ratio for
    mode ``k - 1`` (rhs); it passes when the ratio does not increase. Row
    ``k = 1`` compares against the supremum over the family.
    """
    ratios = [poincare_ratio(u, p, v, m) for u in _sine_family(m, k_max)]
    rows = [SuiteRow("poincare", "k-1", ratios[0], max(ratios), ratios[0] >= max(ratios))]
    for k in range(1, k_max):
        rows.append(
            SuiteRow("poincare", f"k-{k + 1}", ratios[k], ratios[k - 1], ratios[k] < ratios[k - 1])
        )
    return SuiteResult("poincare", rows, {"ratios": ratios, "constant": max(ratios)})


def chain_suite(
    m: ProductMeasureGrid, p, s, v, n_calibration=100, n_holdout=200, seed=42, safety=2.0
) -> SuiteResult:
    """Calibrate chain constants on random fields, then validate on hold-outs.

    Rows are hold-out cases and inequalities: lhs against calibrated
    constant times base.
    """
    rng = np.random.default_rng(seed)

    def family(n):
        return [_scaled(rng, smooth_field(rng, m, zero_boundary=True)) for _ in range(n)]

    cal = family(n_calibration)
    hold = family(n_holdout)
    rep = embedding_chain_suite(cal, hold, p, s, v, m, safety=safety)
    rows = []
    for k, ratios in rep.holdout_ratios.items():
        c = rep.calibrated[k]
        for i, r in enumerate(ratios):
            rows.append(SuiteRow("chain", f"holdout-{i}/{k}", r, c, r <= c * (1 + 1e-9)))
    rows.append(
        SuiteRow("chain", "derived-constants", float(rep.derived_violations), 0.0, rep.derived_violations == 0)
    )
    summary = {
        "calibrated": rep.calibrated,
        "derived_max": rep.derived_max,
        "violations": rep.violations,
        "derived_violations": rep.derived_violations,
    }
    return SuiteResult("chain", rows, summary)


def default_sequence_indices(n_max=1500, count=40):
    return [int(k) for k in np.unique(np.round(np.geomspace(1, n_max, count)))]


def weakconv_suite(
    m: ProductMeasureGrid, p=2.0, v=None, sequence="x^n", limit="0", duals=("1", "x", "sin(pi*x)"),
    indices=None, pairing_tol=1e-3,
) -> SuiteResult:
    """Weak-convergence panel for a sequence given as a formula in the space variables and ``n``.

    A refused panel (hypothesis violated) yields a single failing row whose
    summary carries the error message.
    """
    indices = default_sequence_indices() if indices is None else list(indices)
    names = ("x", "y")[: m.dim] + ("t", "n")
    ex = compile_expr(sequence, names)
    env = {names[i]: m.x[i] for i in range(m.dim)}
    env["t"] = m.t
    seq = [np.broadcast_to(ex(**env, n=float(n)), m.field_shape) for n in indices]
    u, _ = evaluate(limit, m)
    dual_fields = [evaluate(g, m)[0] for g in duals]
    try:
        rep = weak_convergence_panel(seq, u, dual_fields, p, v, m, pairing_tol=pairing_tol)
    except HypothesisViolation as exc:
        row = SuiteRow("weakconv", "refused", math.nan, math.nan, False)
        return SuiteResult("weakconv", [row], {"refused": True, "error": str(exc)})
    rows = []
    for j, g in enumerate(duals):
        gap = abs(rep.pairings[j][-1] - rep.limits[j])
        rows.append(SuiteRow("weakconv", f"dual-{g}", gap, pairing_tol, rep.converged[j]))
    summary = {
        "refused": False,
        "indices": indices,
        "pairings": rep.pairings,
        "limits": rep.limits,
        "exceptional_measure": rep.exceptional_measure,
    }
    return SuiteResult("weakconv", rows, summary)


SUITES = ("holder", "prop2", "poincare", "chain", "weakconv")
