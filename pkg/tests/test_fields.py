import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from varex.fields import (
    AuxExponentField,
    DomainError,
    ExponentField,
    StochasticField,
    WeightField,
    conjugate_exponent,
    conjugate_weight,
    ess_bounds,
    evaluate,
    gradient,
    validate_weight,
)
from varex.grid import build_grid


def test_exponent_bounds(line101):
    p = ExponentField.on(line101, "2 + x")
    assert (p.p_minus, p.p_plus) == (2.0, 3.0)
    assert ess_bounds(p) == (2.0, 3.0)


@pytest.mark.parametrize("spec", [1.0, "0.5 + x", "1/(x-0.5)"])
def test_exponent_domain(line101, spec):
    with pytest.raises(DomainError):
        ExponentField.on(line101, spec)


def test_aux_exponent_must_be_positive(line101):
    with pytest.raises(DomainError):
        AuxExponentField.on(line101, "x - 0.5")


def test_weight_floor(line101):
    with pytest.raises(DomainError):
        WeightField.on(line101, "x")
    assert WeightField.on(line101, "1 + x").values.min() == 1.0


def test_fields_are_read_only(line101):
    p = ExponentField.on(line101, 2.0)
    with pytest.raises(ValueError):
        p.values[0, 0] = 5.0


def test_zero_boundary_enforced(line101):
    with pytest.raises(DomainError):
        StochasticField.on(line101, "x", zero_boundary=True)
    u = StochasticField.on(line101, "sin(pi*x)", zero_boundary=True)
    assert u.values[0, 0] == 0.0 and u.values[0, -1] == 0.0


def test_evaluate_accepts_config_dicts(line101):
    a, _ = evaluate({"kind": "constant", "value": 3}, line101)
    b, src = evaluate({"kind": "expr", "formula": "x + t"}, line101)
    assert np.all(a == 3.0)
    assert np.allclose(b, line101.x[0])
    assert src is not None


@given(st.floats(1.01, 20.0))
def test_conjugate_exponent_identity(p):
    q = conjugate_exponent(np.array([[p]])).values[0, 0]
    assert math.isclose(1 / p + 1 / q, 1.0, rel_tol=1e-12)


def test_conjugate_exponent_rejects_p_le_1():
    with pytest.raises(DomainError):
        conjugate_exponent(np.array([[1.0]]))


def test_conjugate_weight(line101):
    th = 1.0 + line101.x[0]
    w = conjugate_weight(th, 3.0)
    assert np.allclose(w.values, th ** (-0.5))


def test_gradient_exact_for_quadratics(square33):
    x, y = square33.x
    g = gradient(x**2 + 3 * x * y - y, square33).values
    assert np.allclose(g[..., 0], 2 * x + 3 * y)
    assert np.allclose(g[..., 1], 3 * x - 1)


def test_gradient_samples_independent(two_samples):
    u = two_samples.x[0] * (1 + two_samples.t)
    g = gradient(u, two_samples).values[..., 0]
    assert np.allclose(g[0], 1.0) and np.allclose(g[1], 2.0)


def test_validate_weight_regular(line101):
    rep = validate_weight(WeightField.on(line101, "1 + x"), 2.0, 1.0, line101)
    assert rep.h1_ok and rep.h2_ok
    assert math.isclose(rep.int_weight, 1.5, rel_tol=1e-10)
    assert math.isclose(rep.int_neg_s, math.log(2.0), rel_tol=1e-4)
    assert rep.weight.h1_ok is True


def test_validate_weight_vanishing_at_boundary(line101):
    # theta = x is locally integrable with a locally integrable dual for p = 2,
    # but theta^(-1) is not integrable up to x = 0
    rep = validate_weight("x", 2.0, 1.0, line101)
    assert rep.h1_ok
    assert not rep.h2_ok
    assert not rep.passed


def test_validate_weight_interior_singularity(line101):
    # the dual weight 1/|x - 1/2| is not integrable near the interior point
    rep = validate_weight("abs(x - 0.5)", 2.0, 0.5, line101)
    assert not rep.h1_ok


def test_validate_weight_nonpositive_rejected():
    m = build_grid(1, [(0.0, 1.0)], 100)
    with pytest.raises(DomainError):
        validate_weight("abs(x - 0.5)", 2.0, 0.5, m)
