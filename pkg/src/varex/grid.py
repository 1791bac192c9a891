"""Discrete product measure on a box D times a finite sample space.

The spatial part is a uniform tensor grid with trapezoid weights; the
probabilistic part is a finite list of sample labels with probabilities.
Every field in the package is a dense array of shape ``(m, *n)`` where
``m`` is the number of samples and ``n`` the per-axis node counts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

__all__ = [
    "GridError",
    "SpatialGrid",
    "SampleSpace",
    "ProductMeasureGrid",
    "ElementMesh",
    "build_grid",
    "integrate",
]


class GridError(ValueError):
    """Invalid grid or sample-space construction, or a shape mismatch."""


def _trapezoid_weights(n, h):
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return w


@dataclass(frozen=True, eq=False)
class SpatialGrid:
    """Uniform tensor grid on a box in one or two dimensions."""

    bounds: tuple
    n: tuple

    def __post_init__(self):
        if len(self.bounds) != len(self.n):
            raise GridError("bounds and n must have one entry per axis")
        if self.dim not in (1, 2):
            raise GridError(f"dim must be 1 or 2, got {self.dim}")
        for (lo, hi), k in zip(self.bounds, self.n):
            if not lo < hi:
                raise GridError(f"need lo < hi on every axis, got ({lo}, {hi})")
            if k < 3:
                raise GridError(f"need at least 3 nodes per axis, got {k}")

    @property
    def dim(self) -> int:
        return len(self.n)

    @property
    def shape(self) -> tuple:
        return tuple(self.n)

    @property
    def size(self) -> int:
        return int(np.prod(self.n))

    @cached_property
    def h(self) -> tuple:
        return tuple((hi - lo) / (k - 1) for (lo, hi), k in zip(self.bounds, self.n))

    @cached_property
    def coords(self) -> tuple:
        """Per-axis node coordinates."""
        return tuple(np.linspace(lo, hi, k) for (lo, hi), k in zip(self.bounds, self.n))

    @cached_property
    def mesh(self) -> tuple:
        """Node coordinates broadcast to the grid shape (``ij`` indexing)."""
        return tuple(np.meshgrid(*self.coords, indexing="ij"))

    @cached_property
    def quad_weights(self) -> np.ndarray:
        w = _trapezoid_weights(self.n[0], self.h[0])
        for k, h in zip(self.n[1:], self.h[1:]):
            w = np.multiply.outer(w, _trapezoid_weights(k, h))
        w.setflags(write=False)
        return w

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for axis in range(self.dim):
            idx = [slice(None)] * self.dim
            idx[axis] = 0
            mask[tuple(idx)] = True
            idx[axis] = -1
            mask[tuple(idx)] = True
        mask.setflags(write=False)
        return mask

    @property
    def volume(self) -> float:
        return float(np.prod([hi - lo for lo, hi in self.bounds]))

    @cached_property
    def elements(self) -> "ElementMesh":
        return ElementMesh.from_grid(self)


@dataclass(frozen=True, eq=False)
class SampleSpace:
    """Finite probability space: sample labels with positive probabilities."""

    samples: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float).ravel()
        probs = np.asarray(self.probs, dtype=float).ravel()
        if samples.size == 0 or samples.shape != probs.shape:
            raise GridError("samples and probs must be nonempty and of equal length")
        if np.any(probs <= 0):
            raise GridError("sample probabilities must be positive")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise GridError(f"sample probabilities must sum to 1, got {probs.sum()!r}")
        samples.setflags(write=False)
        probs.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "probs", probs)

    @property
    def m(self) -> int:
        return self.samples.size

    @classmethod
    def equal_weights(cls, samples) -> "SampleSpace":
        samples = np.asarray(samples, dtype=float).ravel()
        return cls(samples, np.full(samples.size, 1.0 / samples.size))


@dataclass(frozen=True, eq=False)
class ProductMeasureGrid:
    grid: SpatialGrid
    omega: SampleSpace

    @property
    def field_shape(self) -> tuple:
        return (self.omega.m,) + self.grid.shape

    @property
    def dim(self) -> int:
        return self.grid.dim

    @cached_property
    def weights(self) -> np.ndarray:
        """Full product-measure weight of every (sample, node) pair."""
        w = self.omega.probs.reshape((-1,) + (1,) * self.dim) * self.grid.quad_weights
        w.setflags(write=False)
        return w

    @cached_property
    def x(self) -> tuple:
        """Node coordinates broadcast to the field shape."""
        return tuple(np.broadcast_to(c, self.field_shape) for c in self.grid.mesh)

    @cached_property
    def t(self) -> np.ndarray:
        shape = (-1,) + (1,) * self.dim
        return np.broadcast_to(self.omega.samples.reshape(shape), self.field_shape)

    def check_shape(self, values, what="field"):
        values = np.asarray(values)
        if values.shape != self.field_shape:
            raise GridError(
                f"{what} has shape {values.shape}, grid expects {self.field_shape}"
            )
        return values

    def restrict(self, index: int) -> "ProductMeasureGrid":
        """Single-sample grid (probability one) for sample ``index``."""
        if not 0 <= index < self.omega.m:
            raise GridError(f"sample index {index} out of range for {self.omega.m} samples")
        return ProductMeasureGrid(self.grid, SampleSpace([self.omega.samples[index]], [1.0]))


def build_grid(dim, bounds, n, samples=(0.0,), probs=None) -> ProductMeasureGrid:
    """Construct a product-measure grid.

    Parameters
    ----------
    dim : int
        Spatial dimension, 1 or 2.
    bounds : sequence of (lo, hi)
        Box extents, one pair per axis.
    n : int or sequence of int
        Node counts per axis, each at least 3. A single int applies to every axis.
    samples, probs : sequence of float
        Sample labels and their probabilities. ``probs=None`` gives equal weights.
    """
    bounds = tuple((float(lo), float(hi)) for lo, hi in bounds)
    n = (int(n),) * dim if np.isscalar(n) else tuple(int(k) for k in n)
    if len(bounds) != dim or len(n) != dim:
        raise GridError(f"expected {dim} bounds and node counts")
    grid = SpatialGrid(bounds, n)
    if probs is None:
        omega = SampleSpace.equal_weights(samples)
    else:
        omega = SampleSpace(samples, probs)
    return ProductMeasureGrid(grid, omega)


def integrate(f, m: ProductMeasureGrid) -> float:
    """Integral of ``f`` against the product measure.

    Samples are summed in order in the outer loop, nodes in row-major
    order inside each sample.
    """
    values = np.asarray(getattr(f, "values", f), dtype=float)
    m.check_shape(values)
    w = m.grid.quad_weights.ravel()
    per_sample = values.reshape(m.omega.m, -1) @ w
    return float(per_sample @ m.omega.probs)


@dataclass(frozen=True, eq=False)
class ElementMesh:
    """Linear (P1) elements on the tensor grid.

    Cells are intervals in 1-D; in 2-D every rectangle is split along its
    lower-left/upper-right diagonal. ``grad`` maps nodal values to the
    constant element gradient (one sparse matrix per axis), ``centroid``
    maps nodal values to the value at the element centroid.
    """

    grad: tuple
    centroid: sp.csr_matrix
    measure: np.ndarray
    centers: tuple
    incidence: sp.csr_matrix = field(repr=False)

    @property
    def n_elements(self) -> int:
        return self.measure.size

    @classmethod
    def from_grid(cls, grid: SpatialGrid) -> "ElementMesh":
        if grid.dim == 1:
            return cls._build_1d(grid)
        return cls._build_2d(grid)

    @classmethod
    def _build_1d(cls, grid):
        (n,), (h,) = grid.n, grid.h
        ne = n - 1
        rows = np.repeat(np.arange(ne), 2)
        cols = np.stack([np.arange(ne), np.arange(1, n)], axis=1).ravel()
        gvals = np.tile([-1.0 / h, 1.0 / h], ne)
        g = sp.csr_matrix((gvals, (rows, cols)), shape=(ne, n))
        c = sp.csr_matrix((np.full(2 * ne, 0.5), (rows, cols)), shape=(ne, n))
        inc = sp.csr_matrix((np.ones(2 * ne), (rows, cols)), shape=(ne, n))
        x = grid.coords[0]
        return cls((g,), c, np.full(ne, h), (0.5 * (x[:-1] + x[1:]),), inc)

    @classmethod
    def _build_2d(cls, grid):
        (n1, n2), (h1, h2) = grid.n, grid.h
        node = np.arange(n1 * n2).reshape(n1, n2)
        a = node[:-1, :-1].ravel()  # (i, j)
        b = node[1:, :-1].ravel()  # (i+1, j)
        c = node[1:, 1:].ravel()  # (i+1, j+1)
        d = node[:-1, 1:].ravel()  # (i, j+1)
        # lower triangle (a, b, c) then upper triangle (a, d, c)
        tri = np.concatenate([np.stack([a, b, c], 1), np.stack([a, d, c], 1)])
        ne = tri.shape[0]
        el = np.arange(ne)
        # lower: dx = (b - a)/h1, dy = (c - b)/h2; upper: dx = (c - d)/h1, dy = (d - a)/h2
        gx_rows = np.repeat(el, 2)
        gx_cols = np.concatenate([np.stack([a, b], 1), np.stack([d, c], 1)]).ravel()
        gy_cols = np.concatenate([np.stack([b, c], 1), np.stack([a, d], 1)]).ravel()
        gx = sp.csr_matrix(
            (np.tile([-1.0 / h1, 1.0 / h1], ne), (gx_rows, gx_cols)), shape=(ne, n1 * n2)
        )
        gy = sp.csr_matrix(
            (np.tile([-1.0 / h2, 1.0 / h2], ne), (gx_rows, gy_cols)), shape=(ne, n1 * n2)
        )
        rows3 = np.repeat(el, 3)
        cen = sp.csr_matrix(
            (np.full(3 * ne, 1.0 / 3.0), (rows3, tri.ravel())), shape=(ne, n1 * n2)
        )
        inc = sp.csr_matrix((np.ones(3 * ne), (rows3, tri.ravel())), shape=(ne, n1 * n2))
        xm, ym = (np.asarray(v).ravel() for v in grid.mesh)
        centers = (xm[tri].mean(axis=1), ym[tri].mean(axis=1))
        return cls((gx, gy), cen, np.full(ne, 0.5 * h1 * h2), centers, inc)
