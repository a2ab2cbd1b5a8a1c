"""Rectangular grids on box domains, grid functions with Dirichlet data,
and the central finite-difference stencils used throughout the solver.

Supports dimensions 1 and 2. Gradients use central differences, Hessian
diagonals use 3-point second differences, and the mixed derivative uses
the 4-point cross stencil. All stencils are exact on quadratics.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Grid",
    "GridFn",
    "gradient",
    "hessian",
    "interior_gradient",
    "interior_hessian",
    "monotonicity_check",
    "MonotonicityReport",
    "write_solution_csv",
    "read_solution_csv",
]


@dataclass(frozen=True)
class Grid:
    """Uniform tensor grid on a closed box, endpoints included."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    shape: tuple[int, ...]

    def __post_init__(self):
        if not (1 <= len(self.lo) <= 2) or len(self.lo) != len(self.hi) or len(self.lo) != len(self.shape):
            raise ValueError("grid must be 1D or 2D with matching lo/hi/shape lengths")
        for lo, hi, m in zip(self.lo, self.hi, self.shape):
            if not hi > lo:
                raise ValueError(f"empty axis: [{lo}, {hi}]")
            if m < 3:
                raise ValueError("need at least 3 points per axis (nonempty interior)")

    @classmethod
    def line(cls, lo: float, hi: float, m: int) -> "Grid":
        return cls((float(lo),), (float(hi),), (int(m),))

    @classmethod
    def box(cls, lo: tuple[float, float], hi: tuple[float, float], m: tuple[int, int]) -> "Grid":
        return cls((float(lo[0]), float(lo[1])), (float(hi[0]), float(hi[1])), (int(m[0]), int(m[1])))

    @property
    def n(self) -> int:
        return len(self.shape)

    @property
    def h(self) -> tuple[float, ...]:
        return tuple((hi - lo) / (m - 1) for lo, hi, m in zip(self.lo, self.hi, self.shape))

    def axis(self, i: int) -> np.ndarray:
        return np.linspace(self.lo[i], self.hi[i], self.shape[i])

    def points(self) -> np.ndarray:
        """All grid points, C-ordered, shape (npts, n)."""
        if self.n == 1:
            return self.axis(0)[:, None]
        x1, x2 = np.meshgrid(self.axis(0), self.axis(1), indexing="ij")
        return np.column_stack([x1.ravel(), x2.ravel()])

    def interior_points(self) -> np.ndarray:
        if self.n == 1:
            return self.axis(0)[1:-1, None]
        x1, x2 = np.meshgrid(self.axis(0)[1:-1], self.axis(1)[1:-1], indexing="ij")
        return np.column_stack([x1.ravel(), x2.ravel()])

    @property
    def boundary_mask(self) -> np.ndarray:
        mask = np.ones(self.shape, dtype=bool)
        if self.n == 1:
            mask[1:-1] = False
        else:
            mask[1:-1, 1:-1] = False
        return mask

    def interior_count(self) -> int:
        return int(np.prod([m - 2 for m in self.shape]))

    def margin_mask(self, margin: float) -> np.ndarray:
        """Interior points at distance >= margin from the box boundary."""
        masks = []
        for i in range(self.n):
            x = self.axis(i)
            ok = (x - self.lo[i] >= margin - 1e-12) & (self.hi[i] - x >= margin - 1e-12)
            masks.append(ok)
        if self.n == 1:
            full = masks[0]
        else:
            full = masks[0][:, None] & masks[1][None, :]
        return full & ~self.boundary_mask


@dataclass
class GridFn:
    """Scalar field sampled on a Grid; boundary rows hold the Dirichlet data."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} != grid shape {self.grid.shape}")

    @classmethod
    def from_callable(cls, grid: Grid, fn) -> "GridFn":
        pts = grid.points()
        vals = np.asarray(fn(pts), dtype=float).reshape(grid.shape)
        return cls(grid, vals)

    @classmethod
    def with_boundary(cls, grid: Grid, phi) -> "GridFn":
        """Zero interior, Dirichlet data phi on the boundary."""
        u = cls.from_callable(grid, phi)
        if grid.n == 1:
            u.values[1:-1] = 0.0
        else:
            u.values[1:-1, 1:-1] = 0.0
        return u

    def copy(self) -> "GridFn":
        return GridFn(self.grid, self.values.copy())

    def interior(self) -> np.ndarray:
        if self.grid.n == 1:
            return self.values[1:-1]
        return self.values[1:-1, 1:-1]

    def set_interior(self, vals: np.ndarray) -> None:
        if self.grid.n == 1:
            self.values[1:-1] = vals.reshape(self.grid.shape[0] - 2)
        else:
            self.values[1:-1, 1:-1] = vals.reshape(self.grid.shape[0] - 2, self.grid.shape[1] - 2)

    def boundary_values(self) -> np.ndarray:
        return self.values[self.grid.boundary_mask]

    def interp(self, points: np.ndarray) -> np.ndarray:
        """Piecewise multilinear interpolation at arbitrary points in the box."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        g = self.grid
        out_shape = pts.shape[0]
        idx = []
        frac = []
        for i in range(g.n):
            t = (pts[:, i] - g.lo[i]) / g.h[i]
            t = np.clip(t, 0.0, g.shape[i] - 1 - 1e-12)
            i0 = np.floor(t).astype(int)
            idx.append(i0)
            frac.append(t - i0)
        if g.n == 1:
            i0, s = idx[0], frac[0]
            return (1 - s) * self.values[i0] + s * self.values[i0 + 1]
        i0, j0 = idx
        s, t = frac
        v = self.values
        out = ((1 - s) * (1 - t) * v[i0, j0] + s * (1 - t) * v[i0 + 1, j0]
               + (1 - s) * t * v[i0, j0 + 1] + s * t * v[i0 + 1, j0 + 1])
        return out.reshape(out_shape)


def gradient(u: GridFn, idx: tuple[int, ...] | int) -> np.ndarray:
    """Central-difference gradient at one interior index."""
    g = u.grid
    if isinstance(idx, int):
        idx = (idx,)
    _require_interior(g, idx)
    v = u.values
    if g.n == 1:
        (i,) = idx
        return np.array([(v[i + 1] - v[i - 1]) / (2 * g.h[0])])
    i, j = idx
    return np.array([
        (v[i + 1, j] - v[i - 1, j]) / (2 * g.h[0]),
        (v[i, j + 1] - v[i, j - 1]) / (2 * g.h[1]),
    ])


def hessian(u: GridFn, idx: tuple[int, ...] | int) -> np.ndarray:
    """Second-difference Hessian at one interior index (symmetric n x n array)."""
    g = u.grid
    if isinstance(idx, int):
        idx = (idx,)
    _require_interior(g, idx)
    v = u.values
    if g.n == 1:
        (i,) = idx
        return np.array([[(v[i + 1] - 2 * v[i] + v[i - 1]) / g.h[0] ** 2]])
    i, j = idx
    h1, h2 = g.h
    m11 = (v[i + 1, j] - 2 * v[i, j] + v[i - 1, j]) / h1 ** 2
    m22 = (v[i, j + 1] - 2 * v[i, j] + v[i, j - 1]) / h2 ** 2
    m12 = (v[i + 1, j + 1] + v[i - 1, j - 1] - v[i + 1, j - 1] - v[i - 1, j + 1]) / (4 * h1 * h2)
    return np.array([[m11, m12], [m12, m22]])


def _require_interior(g: Grid, idx: tuple[int, ...]) -> None:
    for i, m in zip(idx, g.shape):
        if not 1 <= i <= m - 2:
            raise IndexError(f"index {idx} is not interior for shape {g.shape}")


def interior_gradient(u: GridFn) -> np.ndarray:
    """Central gradient at every interior point, shape (n_interior, n), C-ordered."""
    g = u.grid
    v = u.values
    if g.n == 1:
        p = (v[2:] - v[:-2]) / (2 * g.h[0])
        return p[:, None]
    h1, h2 = g.h
    p1 = (v[2:, 1:-1] - v[:-2, 1:-1]) / (2 * h1)
    p2 = (v[1:-1, 2:] - v[1:-1, :-2]) / (2 * h2)
    return np.column_stack([p1.ravel(), p2.ravel()])


def interior_hessian(u: GridFn) -> np.ndarray:
    """Hessian entries at every interior point: columns (m11,) in 1D, (m11, m12, m22) in 2D."""
    g = u.grid
    v = u.values
    if g.n == 1:
        m11 = (v[2:] - 2 * v[1:-1] + v[:-2]) / g.h[0] ** 2
        return m11[:, None]
    h1, h2 = g.h
    m11 = (v[2:, 1:-1] - 2 * v[1:-1, 1:-1] + v[:-2, 1:-1]) / h1 ** 2
    m22 = (v[1:-1, 2:] - 2 * v[1:-1, 1:-1] + v[1:-1, :-2]) / h2 ** 2
    m12 = (v[2:, 2:] + v[:-2, :-2] - v[2:, :-2] - v[:-2, 2:]) / (4 * h1 * h2)
    return np.column_stack([m11.ravel(), m12.ravel(), m22.ravel()])


def hessian_frobenius(u: GridFn) -> np.ndarray:
    """|D2u| (Frobenius, counting both off-diagonal entries) at interior points."""
    ent = interior_hessian(u)
    if ent.shape[1] == 1:
        return np.abs(ent[:, 0])
    return np.sqrt(ent[:, 0] ** 2 + 2 * ent[:, 1] ** 2 + ent[:, 2] ** 2)


@dataclass
class MonotonicityReport:
    passed: bool
    offending: list  # (branch, point, a11, a12, a22)

    def __bool__(self) -> bool:
        return self.passed


def monotonicity_check(op, g: Grid, tol: float = 1e-12) -> MonotonicityReport:
    """Diagonal-dominance gate |a12| <= min(a11, a22) at every grid point and branch.

    Guarantees the 9-point stencil built from the coefficient matrices is
    monotone, which in turn makes the discrete comparison bounds trustworthy.
    In 1D there is no cross term and the check always passes.
    """
    pts = g.points()
    tables = op.coefficients(pts)
    offending = []
    if g.n == 1:
        return MonotonicityReport(True, offending)
    for k in range(tables.shape[0]):
        a11, a12, a22 = tables[k, :, 0], tables[k, :, 1], tables[k, :, 2]
        bad = np.abs(a12) > np.minimum(a11, a22) + tol
        for i in np.nonzero(bad)[0]:
            offending.append((k, tuple(pts[i]), float(a11[i]), float(a12[i]), float(a22[i])))
    return MonotonicityReport(len(offending) == 0, offending)


def write_solution_csv(u: GridFn, path) -> None:
    """One row per grid point, columns x1[,x2],u, 17 significant digits."""
    g = u.grid
    pts = g.points()
    vals = u.values.ravel()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i + 1}" for i in range(g.n)] + ["u"])
        for row, v in zip(pts, vals):
            w.writerow([f"{c:.17g}" for c in row] + [f"{v:.17g}"])


def read_solution_csv(grid: Grid, path) -> GridFn:
    """Read a solution written by write_solution_csv back onto the same grid."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if len(header) != grid.n + 1:
        raise ValueError(f"{path}: expected {grid.n + 1} columns, found {len(header)}")
    if len(body) != int(np.prod(grid.shape)):
        raise ValueError(f"{path}: expected {int(np.prod(grid.shape))} rows, found {len(body)}")
    vals = np.array([float(r[-1]) for r in body]).reshape(grid.shape)
    pts = grid.points()
    got = np.array([[float(c) for c in r[:-1]] for r in body])
    if not np.allclose(got, pts, atol=1e-9):
        raise ValueError(f"{path}: point coordinates do not match the configured grid")
    return GridFn(grid, vals)
