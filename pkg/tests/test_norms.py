import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from varex.fields import StochasticField
from varex.grid import build_grid, integrate
from varex.norms import (
    NotInSpaceError,
    check_prop2,
    luxemburg_norm,
    luxemburg_root,
    modular,
    sobolev_norm,
)
from varex.random_fields import random_exponent, random_weight, smooth_field


def brute_norm(u, p, w, m):
    """Independent oracle: root of the modular equation by Brent's method."""
    a = np.abs(u)

    def g(lam):
        return integrate(w * (a / lam) ** p, m) - 1.0

    return brentq(g, 1e-8, 1e8, xtol=1e-15, rtol=1e-15)


def test_constant_p_closed_form(line101):
    u = 1 + line101.x[0]
    # modular of (1+x)^3 is 15/4 up to quadrature error
    rho = modular(u, 3.0, None, line101)
    assert math.isclose(luxemburg_norm(u, 3.0, None, line101).value, rho ** (1 / 3), rel_tol=1e-12)


def two_valued_case():
    # an even node count puts exactly half the trapezoid mass on each side of 1/2
    m = build_grid(1, [(0.0, 1.0)], 1000)
    p = np.where(m.x[0] <= 0.5, 2.0, 4.0)
    return m, np.full(m.field_shape, 2.0), p


def test_two_valued_exponent_closed_form():
    # (y + y^2)/2 = 1 with y = (2/lam)^2 has root y = 1, so the norm is 2
    m, u, p = two_valued_case()
    assert math.isclose(luxemburg_norm(u, p, None, m).value, 2.0, rel_tol=1e-10)
    assert math.isclose(brute_norm(u, p, 1.0, m), 2.0, rel_tol=1e-10)


def test_two_valued_exponent_prop2():
    m, u, p = two_valued_case()
    rep = check_prop2(u, p, None, m)
    assert math.isclose(rep.modular, 10.0, rel_tol=1e-12)
    assert rep.large_applies and rep.passed
    assert rep.chain_large[0] <= 10.0 <= rep.chain_large[2]


def test_modular_of_identity():
    m = build_grid(1, [(0.0, 1.0)], 2001)
    assert abs(modular(m.x[0], 2.0, None, m) - 1 / 3) < 1e-6
    assert modular(np.ones(m.field_shape), 3.0, None, m) == pytest.approx(1.0)


def test_sobolev_norm_of_identity(line401):
    x = line401.x[0]
    assert abs(sobolev_norm(x, 2.0, None, line401) - (1 / math.sqrt(3) + 1)) < 1e-4


def test_weighted_unweighted_link(line101, rng):
    p = random_exponent(rng, line101)
    th = random_weight(rng, line101)
    u = smooth_field(rng, line101)
    a = luxemburg_norm(u, p, th, line101).value
    b = luxemburg_norm(u * th ** (1 / p), p, None, line101).value
    assert math.isclose(a, b, rel_tol=1e-10)


def test_monotone_in_modulus(line101, rng):
    p = random_exponent(rng, line101)
    u = smooth_field(rng, line101)
    w = np.abs(u) + np.abs(smooth_field(rng, line101))
    assert luxemburg_norm(u, p, None, line101).value <= luxemburg_norm(w, p, None, line101).value + 1e-12


def test_matches_brute_force_variable_p(line101, rng):
    for _ in range(10):
        p = random_exponent(rng, line101)
        th = random_weight(rng, line101)
        u = smooth_field(rng, line101)
        got = luxemburg_norm(u, p, th, line101).value
        assert math.isclose(got, brute_norm(u, p, th, line101), rel_tol=1e-9)


def test_zero_field(line101):
    res = luxemburg_norm(np.zeros((1, 101)), 2.0, None, line101)
    assert res.value == 0.0


def test_vector_field_uses_magnitude(square33):
    from varex.fields import gradient

    x, y = square33.x
    g = gradient(3 * x + 4 * y, square33)
    assert math.isclose(luxemburg_norm(g, 2.0, None, square33).value, 5.0, rel_tol=1e-12)


def test_overflow_raises_not_in_space(line101):
    u = np.full((1, 101), 1e200)
    assert modular(u, 4.0, None, line101) == math.inf
    with pytest.raises(NotInSpaceError):
        luxemburg_norm(u, 4.0, None, line101)


def test_sobolev_norm_of_sine(line401):
    u = StochasticField.on(line401, "sin(pi*x)", zero_boundary=True)
    expected = math.sqrt(0.5) + math.pi * math.sqrt(0.5)
    assert math.isclose(sobolev_norm(u, 2.0, None, line401), expected, rel_tol=5e-5)
    assert math.isclose(
        sobolev_norm(u, 2.0, None, line401, seminorm=True), math.pi * math.sqrt(0.5), rel_tol=5e-5
    )


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    c=st.floats(1e-3, 1e3),
)
def test_homogeneity(seed, c):
    m = build_grid(1, [(0.0, 1.0)], 41)
    rng = np.random.default_rng(seed)
    p = random_exponent(rng, m)
    th = random_weight(rng, m)
    u = smooth_field(rng, m)
    a = luxemburg_norm(c * u, p, th, m).value
    b = luxemburg_norm(u, p, th, m).value
    assert math.isclose(a, c * b, rel_tol=1e-9)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_triangle_inequality(seed):
    m = build_grid(1, [(0.0, 1.0)], 41)
    rng = np.random.default_rng(seed)
    p = random_exponent(rng, m)
    th = random_weight(rng, m)
    u, v = smooth_field(rng, m), smooth_field(rng, m)
    lhs = luxemburg_norm(u + v, p, th, m).value
    rhs = luxemburg_norm(u, p, th, m).value + luxemburg_norm(v, p, th, m).value
    assert lhs <= rhs * (1 + 1e-9)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(-4, 4))
def test_prop2_chains(seed, scale):
    m = build_grid(1, [(0.0, 1.0)], 41)
    rng = np.random.default_rng(seed)
    p = random_exponent(rng, m)
    th = random_weight(rng, m)
    u = smooth_field(rng, m) * 10.0**scale
    rep = check_prop2(u, p, th, m)
    assert rep.passed
    assert rep.large_applies or rep.small_applies


def test_prop2_boundary_case(line101, rng):
    p = random_exponent(rng, line101)
    u = smooth_field(rng, line101)
    u = u / luxemburg_norm(u, p, None, line101).value
    rep = check_prop2(u, p, None, line101)
    assert rep.large_applies and rep.small_applies
    assert abs(rep.modular - 1.0) <= 1e-8
