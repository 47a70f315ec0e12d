"""Uniform Cartesian grids and the discrete calculus shared by all modules.

Fields live on the nodes of a uniform, axis-aligned mesh.  Arrays are indexed
``values[i, j, k]`` with i along x and k along z, C-ordered.  All derivative
operators are second order: the 7-point Laplacian, central first differences
in the interior with one-sided 3-point differences on faces, and a one-sided
3-point normal derivative on the top face (the measurement side, z = z_max).

Grid refinement always halves h and doubles the cell count, so coarse nodes
are a subset of fine nodes; `interp_refine` is trilinear on the nested pairs
and restriction back to coarse nodes is the identity.
"""

from __future__ import annotations

import dataclasses
from typing import Callable, Sequence

import numpy as np


class GridError(ValueError):
    """Inconsistent grid geometry or field/grid mismatch."""


@dataclasses.dataclass(frozen=True)
class Grid3:
    """Uniform node-centred mesh over an axis-aligned box.

    origin: coordinates of node (0, 0, 0)
    h:      node spacing, identical along the three axes
    dims:   node counts (nx, ny, nz), each at least 3
    """

    origin: tuple[float, float, float]
    h: float
    dims: tuple[int, int, int]

    def __post_init__(self):
        if self.h <= 0.0:
            raise GridError(f"spacing must be positive, got {self.h}")
        if len(self.dims) != 3 or any(int(n) < 3 for n in self.dims):
            raise GridError(f"need at least 3 nodes per axis, got {self.dims}")
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "dims", tuple(int(n) for n in self.dims))
        object.__setattr__(self, "h", float(self.h))

    # -- geometry ---------------------------------------------------------

    def axis(self, d: int) -> np.ndarray:
        return self.origin[d] + self.h * np.arange(self.dims[d])

    @property
    def upper(self) -> tuple[float, float, float]:
        return tuple(self.origin[d] + self.h * (self.dims[d] - 1) for d in range(3))

    @property
    def node_count(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]

    def meshgrid(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return np.meshgrid(self.axis(0), self.axis(1), self.axis(2), indexing="ij")

    def index_of(self, point: Sequence[float], tol: float = 1e-9) -> tuple[int, int, int]:
        """Node index of a point that must coincide with a grid node."""
        out = []
        for d in range(3):
            r = (float(point[d]) - self.origin[d]) / self.h
            i = int(round(r))
            if abs(r - i) > tol or not (0 <= i < self.dims[d]):
                raise GridError(f"point {tuple(point)} is not a node of {self}")
            out.append(i)
        return tuple(out)

    # -- refinement -------------------------------------------------------

    def refined(self) -> "Grid3":
        """The nested grid with spacing h/2 over the same box."""
        return Grid3(self.origin, self.h / 2.0, tuple(2 * n - 1 for n in self.dims))

    def is_refinement_of(self, coarse: "Grid3", tol: float = 1e-12) -> bool:
        return (
            abs(self.h - coarse.h / 2.0) <= tol * coarse.h
            and self.dims == tuple(2 * n - 1 for n in coarse.dims)
            and all(abs(a - b) <= tol for a, b in zip(self.origin, coarse.origin))
        )

    # -- (de)serialisation -------------------------------------------------

    def to_json(self) -> dict:
        return {"origin": list(self.origin), "spacing": self.h, "dims": list(self.dims)}

    @staticmethod
    def from_json(d: dict) -> "Grid3":
        return Grid3(tuple(d["origin"]), d["spacing"], tuple(d["dims"]))


def _check_values(grid: Grid3, values: np.ndarray, ncomp: int | None) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    want = grid.dims if ncomp is None else (ncomp,) + grid.dims
    if values.shape != want:
        raise GridError(f"field shape {values.shape} does not match {want}")
    if not np.isfinite(values).all():
        raise GridError("field contains non-finite values")
    return np.ascontiguousarray(values)


@dataclasses.dataclass
class ScalarField:
    """One float64 value per node of `grid`."""

    grid: Grid3
    values: np.ndarray

    def __post_init__(self):
        self.values = _check_values(self.grid, self.values, None)

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy())

    @staticmethod
    def zeros(grid: Grid3) -> "ScalarField":
        return ScalarField(grid, np.zeros(grid.dims))

    @staticmethod
    def from_function(grid: Grid3, fn: Callable) -> "ScalarField":
        x, y, z = grid.meshgrid()
        return ScalarField(grid, np.asarray(fn(x, y, z), dtype=np.float64))


@dataclasses.dataclass
class VecField:
    """A stack of scalar fields over one grid, shape (ncomp, nx, ny, nz).

    Component 0 is the travel-time unknown throughout this package; the
    remaining components are the time-basis coefficients of the shifted wave.
    """

    grid: Grid3
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 4:
            raise GridError(f"vector field needs 4 axes, got shape {v.shape}")
        self.values = _check_values(self.grid, v, v.shape[0])

    @property
    def ncomp(self) -> int:
        return self.values.shape[0]

    def component(self, n: int) -> ScalarField:
        return ScalarField(self.grid, self.values[n])

    def copy(self) -> "VecField":
        return VecField(self.grid, self.values.copy())

    @staticmethod
    def zeros(grid: Grid3, ncomp: int) -> "VecField":
        return VecField(grid, np.zeros((ncomp,) + grid.dims))


class BoundaryMask:
    """Node classification of a box grid: interior, top face, rest of hull.

    The open top face (z = z_max, rim excluded) is the measurement side and
    carries the Neumann data; the rim is counted with the lateral/bottom
    hull so the three sets partition the nodes.
    """

    def __init__(self, grid: Grid3):
        self.grid = grid
        nx, ny, nz = grid.dims
        i, j, k = np.indices(grid.dims)
        hull = (i == 0) | (i == nx - 1) | (j == 0) | (j == ny - 1) | (k == 0) | (k == nz - 1)
        top = (k == nz - 1) & (i > 0) & (i < nx - 1) & (j > 0) & (j < ny - 1)
        self.interior = ~hull
        self.gamma_top = top
        self.gamma_rest = hull & ~top
        self.boundary = hull

    def boundary_nodes(self) -> np.ndarray:
        """(nb, 3) int indices of all hull nodes, lexicographic in (i, j, k)."""
        return np.argwhere(self.boundary)

    def top_nodes(self) -> np.ndarray:
        """(nt, 3) int indices of open top-face nodes, lexicographic."""
        return np.argwhere(self.gamma_top)


# ---------------------------------------------------------------------------
# discrete operators
# ---------------------------------------------------------------------------


def laplacian7(f: ScalarField) -> ScalarField:
    """7-point Laplacian on interior nodes; boundary entries are zero."""
    u = f.values
    h2 = f.grid.h * f.grid.h
    out = np.zeros_like(u)
    c = u[1:-1, 1:-1, 1:-1]
    s = u[:-2, 1:-1, 1:-1] + u[2:, 1:-1, 1:-1]
    s = s + u[1:-1, :-2, 1:-1]
    s = s + u[1:-1, 2:, 1:-1]
    s = s + u[1:-1, 1:-1, :-2]
    s = s + u[1:-1, 1:-1, 2:]
    out[1:-1, 1:-1, 1:-1] = (s - 6.0 * c) / h2
    return ScalarField(f.grid, out)


def _axis_gradient(u: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Central differences inside, second-order one-sided on the two faces."""
    g = np.empty_like(u)
    lo = [slice(None)] * 3
    hi = [slice(None)] * 3
    mid = [slice(None)] * 3
    lo[axis], hi[axis], mid[axis] = slice(0, -2), slice(2, None), slice(1, -1)
    g[tuple(mid)] = (u[tuple(hi)] - u[tuple(lo)]) / (2.0 * h)

    # one-sided: (-3 f0 + 4 f1 - f2) / (2h) at the low face, mirrored on top
    s0 = [slice(None)] * 3
    s1 = [slice(None)] * 3
    s2 = [slice(None)] * 3
    s0[axis], s1[axis], s2[axis] = 0, 1, 2
    g[tuple(s0)] = (-3.0 * u[tuple(s0)] + 4.0 * u[tuple(s1)] - u[tuple(s2)]) / (2.0 * h)
    s0[axis], s1[axis], s2[axis] = -1, -2, -3
    g[tuple(s0)] = (3.0 * u[tuple(s0)] - 4.0 * u[tuple(s1)] + u[tuple(s2)]) / (2.0 * h)
    return g


def gradient_c(f: ScalarField) -> np.ndarray:
    """Second-order gradient, shape (3, nx, ny, nz)."""
    u = f.values
    h = f.grid.h
    return np.stack([_axis_gradient(u, d, h) for d in range(3)])


def dz_oneside(f: ScalarField) -> np.ndarray:
    """Outward-normal derivative on the full top face (z = z_max), shape (nx, ny).

    Second-order one-sided stencil into the domain:
    (3 f_K - 4 f_{K-1} + f_{K-2}) / (2h).
    """
    u = f.values
    h = f.grid.h
    return (3.0 * u[:, :, -1] - 4.0 * u[:, :, -2] + u[:, :, -3]) / (2.0 * h)


def interp_refine(f: ScalarField, fine: Grid3) -> ScalarField:
    """Trilinear interpolation onto the nested half-spacing grid.

    Exact for trilinear functions; restriction of the result back to the
    coarse nodes reproduces the input bit for bit.
    """
    if not fine.is_refinement_of(f.grid):
        raise GridError("target grid is not the nested refinement of the source")
    u = f.values
    for axis in range(3):
        n = u.shape[axis]
        shape = list(u.shape)
        shape[axis] = 2 * n - 1
        out = np.empty(shape)
        even = [slice(None)] * 3
        even[axis] = slice(0, None, 2)
        out[tuple(even)] = u
        odd = [slice(None)] * 3
        odd[axis] = slice(1, None, 2)
        lo = [slice(None)] * 3
        lo[axis] = slice(0, -1)
        hi = [slice(None)] * 3
        hi[axis] = slice(1, None)
        out[tuple(odd)] = 0.5 * (u[tuple(lo)] + u[tuple(hi)])
        u = out
    return ScalarField(fine, u)


def interp_refine_vec(W: VecField, fine: Grid3) -> VecField:
    comps = [interp_refine(W.component(n), fine).values for n in range(W.ncomp)]
    return VecField(fine, np.stack(comps))


def weighted_quadrature(f: ScalarField, weight=None, interior_only: bool = True) -> float:
    """h^3-weighted node sum of f (times an optional node weight).

    `weight` may be None, an ndarray over the grid, or a callable on
    (x, y, z) node-coordinate arrays.  The reduction order is fixed
    (np.sum over the C-ordered array), so results are reproducible.
    """
    v = f.values
    if weight is not None:
        if callable(weight):
            x, y, z = f.grid.meshgrid()
            w = np.asarray(weight(x, y, z), dtype=np.float64)
        else:
            w = np.asarray(weight, dtype=np.float64)
            if w.shape != v.shape:
                raise GridError(f"weight shape {w.shape} != field shape {v.shape}")
        v = v * w
    if interior_only:
        v = v[1:-1, 1:-1, 1:-1]
    return float(v.sum()) * f.grid.h ** 3
