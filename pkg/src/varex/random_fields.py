"""Seeded random fields for the randomized inequality suites.

Every generator takes a :class:`numpy.random.Generator` and a grid and
returns a plain array of the field shape. Fields are short random
trigonometric sums, so they are smooth and their values stay moderate.
"""

import numpy as np

from .grid import ProductMeasureGrid

__all__ = [
    "smooth_field",
    "random_exponent",
    "random_aux_exponent",
    "random_weight",
    "random_state",
]


def _unit(m, axis_index):
    (lo, hi) = m.grid.bounds[axis_index]
    return (m.x[axis_index] - lo) / (hi - lo)


def smooth_field(rng, m: ProductMeasureGrid, zero_boundary=False, modes=4, decay=1.0):
    """Random trigonometric sum with amplitudes decaying like ``k**-decay``.

    With ``zero_boundary`` only sine modes are used, so the field vanishes
    on the boundary of the box. The sample dependence is a random smooth
    function of ``t``.
    """
    shape = m.field_shape
    out = np.zeros(shape)
    t = m.t
    ks = range(1, modes + 1)
    grids = [_unit(m, i) for i in range(m.dim)]
    for kk in np.ndindex(*(modes,) * m.dim):
        k = [ks[i] for i in kk]
        amp = rng.standard_normal() / (np.prod(k) ** decay)
        amp_t = rng.standard_normal() * 0.3
        term = np.ones(shape)
        for i, ki in enumerate(k):
            if zero_boundary:
                term = term * np.sin(ki * np.pi * grids[i])
            else:
                phase = rng.uniform(0, 2 * np.pi)
                term = term * np.cos(ki * np.pi * grids[i] + phase)
        out += (amp + amp_t * np.sin(t + kk[0])) * term
    if not zero_boundary:
        out += rng.standard_normal()
    if zero_boundary:
        from .fields import StochasticField

        out[StochasticField._boundary(out)] = 0.0
    return out


def _squash(z, lo, hi):
    return lo + (hi - lo) / (1.0 + np.exp(-z))


def random_exponent(rng, m, lo=1.2, hi=4.0):
    """Exponent field with values in ``(lo, hi)``."""
    return _squash(smooth_field(rng, m, modes=3), lo, hi)


def random_aux_exponent(rng, m, lo=0.5, hi=3.0):
    return _squash(smooth_field(rng, m, modes=3), lo, hi)


def random_weight(rng, m, spread=1.0):
    """Positive weight ``exp(spread * z)`` with ``z`` a tame smooth field."""
    z = smooth_field(rng, m, modes=3)
    z = z / max(1.0, float(np.max(np.abs(z))))
    return np.exp(spread * z)


def random_state(seed) -> np.random.Generator:
    return np.random.default_rng(seed)
