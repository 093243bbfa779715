"""Tensor-product cubic B-spline spaces on rectangular grids.

Non-periodic directions use open-uniform knots (endpoint interpolating),
periodic directions use uniform knots with wrapped indices. Both give C²
functions, so second derivatives are square integrable across cells.
"""

from dataclasses import dataclass
from functools import cached_property
import string

import numpy as np
from scipy.interpolate import BSpline

DEGREE = 3


@dataclass(frozen=True)
class Grid:
    lengths: tuple
    cells: tuple
    periodic: tuple

    def __post_init__(self):
        lengths = tuple(float(v) for v in self.lengths)
        cells = tuple(int(v) for v in self.cells)
        periodic = tuple(bool(v) for v in self.periodic)
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "periodic", periodic)
        if not (len(lengths) == len(cells) == len(periodic)) or len(lengths) not in (2, 3):
            raise ValueError("grid needs 2 or 3 directions with matching lengths/cells/periodic")
        if any(n < 2 for n in cells):
            raise ValueError(f"need at least 2 cells per direction, got {cells}")
        if any(not L > 0 for L in lengths):
            raise ValueError(f"lengths must be positive, got {lengths}")

    @property
    def dim(self):
        return len(self.cells)

    @property
    def h(self):
        return tuple(L / n for L, n in zip(self.lengths, self.cells))

    @property
    def volume(self):
        return float(np.prod(self.lengths))


class SplineBasis1D:
    """Cubic B-splines on ``n_cells`` uniform cells of [0, length]."""

    def __init__(self, n_cells, length, periodic=False):
        self.n_cells = int(n_cells)
        self.length = float(length)
        self.periodic = bool(periodic)
        h = self.length / self.n_cells
        if self.periodic:
            self.knots = h * np.arange(-DEGREE, self.n_cells + DEGREE + 1, dtype=float)
            self.n_basis = self.n_cells
        else:
            interior = h * np.arange(1, self.n_cells, dtype=float)
            self.knots = np.concatenate([np.zeros(DEGREE + 1), interior, np.full(DEGREE + 1, self.length)])
            self.n_basis = self.n_cells + DEGREE
        self._splines = []
        n_ext = len(self.knots) - DEGREE - 1
        for j in range(n_ext):
            c = np.zeros(n_ext)
            c[j] = 1.0
            s = BSpline(self.knots, c, DEGREE, extrapolate=True)
            self._splines.append((s, s.derivative(1), s.derivative(2)))

    @property
    def h(self):
        return self.length / self.n_cells

    def cell_dofs(self, cell):
        """Global indices of the four functions supported on ``cell``."""
        idx = np.arange(cell, cell + DEGREE + 1)
        return idx % self.n_basis if self.periodic else idx

    def eval_cell(self, cell, x):
        """Values, first and second derivatives, shape (3, 4, len(x))."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.empty((3, DEGREE + 1, x.size))
        for k in range(DEGREE + 1):
            for o in range(3):
                out[o, k] = self._splines[cell + k][o](x)
        return out

    def greville(self):
        if self.periodic:
            raise ValueError("Greville abscissae are only used on open knot vectors")
        t = self.knots
        return np.array([t[j + 1:j + DEGREE + 1].mean() for j in range(self.n_basis)])

    def eval_function(self, coef, x, nu=0):
        """Evaluate sum_j coef_j B_j^{(nu)}(x) (used by tests and projection oracles)."""
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for j in range(len(self.knots) - DEGREE - 1):
            out = out + coef[j % self.n_basis] * self._splines[j][nu](x)
        return out


def _outer_einsum(d):
    # 'aip,bjq->abijpq' style tensor product of d per-direction tables
    cells = string.ascii_lowercase[:d]
    locs = string.ascii_lowercase[8:8 + d]
    quads = string.ascii_lowercase[16:16 + d]
    ins = ",".join(c + l + q for c, l, q in zip(cells, locs, quads))
    return f"{ins}->{cells}{locs}{quads}"


@dataclass
class QuadTable:
    """Basis data at quadrature points, flattened over cells / local functions / points.

    N: (nc, nloc, nq); dN: (nc, nloc, nq, d); d2N: (nc, nloc, nq, d, d);
    w: (nc, nq) weights including the cell measure; x: (nc, nq, d); dofs: (nc, nloc).
    """
    N: np.ndarray
    dN: np.ndarray
    d2N: np.ndarray
    w: np.ndarray
    x: np.ndarray
    dofs: np.ndarray


class SplineBasis:
    """Tensor-product cubic spline space on a :class:`Grid`."""

    def __init__(self, grid):
        self.grid = grid
        self.bases = [SplineBasis1D(n, L, per) for n, L, per in zip(grid.cells, grid.lengths, grid.periodic)]
        self.shape = tuple(b.n_basis for b in self.bases)
        self.n_basis = int(np.prod(self.shape))

    @property
    def dim(self):
        return self.grid.dim

    @property
    def degree(self):
        return DEGREE

    def dof_index(self, *idx):
        return np.ravel_multi_index(idx, self.shape)

    def side_dofs(self, side):
        """Global indices of functions that do not vanish on ``side`` ('x2+', 'x1-', ...)."""
        axis, end = _parse_side(side, self.dim)
        if self.grid.periodic[axis]:
            raise ValueError(f"side {side} lies in a periodic direction")
        grids = [np.arange(n) for n in self.shape]
        grids[axis] = np.array([0 if end == "-" else self.shape[axis] - 1])
        mesh = np.meshgrid(*grids, indexing="ij")
        return np.sort(np.ravel_multi_index([m.ravel() for m in mesh], self.shape))

    def _tables_1d(self, axis, points, weights):
        b = self.bases[axis]
        h = b.h
        vals = np.empty((3, b.n_cells, DEGREE + 1, len(points)))
        dofs = np.empty((b.n_cells, DEGREE + 1), dtype=int)
        xs = np.empty((b.n_cells, len(points)))
        for c in range(b.n_cells):
            x = (c + points) * h
            vals[:, c] = b.eval_cell(c, x)
            dofs[c] = b.cell_dofs(c)
            xs[c] = x
        return vals, dofs, xs, weights * h

    def quad_table(self, nquad=4):
        """Tensor Gauss-Legendre table with ``nquad`` points per direction per cell."""
        g, gw = np.polynomial.legendre.leggauss(nquad)
        pts, wts = 0.5 * (g + 1.0), 0.5 * gw
        return self._build_table([(pts, wts)] * self.dim)

    def face_table(self, side, nquad=4):
        """Table on a boundary side; only values N and the face measure are meaningful."""
        axis, end = _parse_side(side, self.dim)
        if self.grid.periodic[axis]:
            raise ValueError(f"side {side} lies in a periodic direction")
        g, gw = np.polynomial.legendre.leggauss(nquad)
        pts, wts = 0.5 * (g + 1.0), 0.5 * gw
        rules = [(pts, wts)] * self.dim
        # single point at the end of the boundary cell, unit weight (rescaled below)
        rules[axis] = (np.array([0.0 if end == "-" else 1.0]), np.array([1.0]))
        table = self._build_table(rules, only_cells={axis: 0 if end == "-" else self.grid.cells[axis] - 1})
        table.w = table.w / self.grid.h[axis]
        return table

    def _build_table(self, rules, only_cells=None):
        d = self.dim
        per_dir = [self._tables_1d(k, *rules[k]) for k in range(d)]
        if only_cells:
            trimmed = []
            for k, (vals, dofs, xs, w) in enumerate(per_dir):
                if k in only_cells:
                    c = only_cells[k]
                    vals, dofs, xs = vals[:, c:c + 1], dofs[c:c + 1], xs[c:c + 1]
                trimmed.append((vals, dofs, xs, w))
            per_dir = trimmed
        ncell = [v[1].shape[0] for v in per_dir]
        nq1 = [len(v[3]) for v in per_dir]
        nc = int(np.prod(ncell))
        nloc = (DEGREE + 1) ** d
        nq = int(np.prod(nq1))
        expr = _outer_einsum(d)

        def product(orders):
            return np.einsum(expr, *[per_dir[k][0][o] for k, o in enumerate(orders)]).reshape(nc, nloc, nq)

        N = product([0] * d)
        dN = np.empty((nc, nloc, nq, d))
        d2N = np.empty((nc, nloc, nq, d, d))
        for j in range(d):
            orders = [0] * d
            orders[j] = 1
            dN[..., j] = product(orders)
            for k in range(j, d):
                orders = [0] * d
                orders[j] += 1
                orders[k] += 1
                d2N[..., j, k] = d2N[..., k, j] = product(orders)

        # weights and coordinates
        wexpr = ",".join(string.ascii_lowercase[16 + k] for k in range(d)) + "->" + string.ascii_lowercase[16:16 + d]
        w_ref = np.einsum(wexpr, *[per_dir[k][3] for k in range(d)]).reshape(nq)
        w = np.broadcast_to(w_ref, (nc, nq)).copy()
        x = np.empty((nc, nq, d))
        cell_mesh = np.meshgrid(*[np.arange(n) for n in ncell], indexing="ij")
        cell_ids = [m.ravel() for m in cell_mesh]
        for k in range(d):
            xs = per_dir[k][2]  # (ncell_k, nq_k)
            xk = xs[cell_ids[k]].reshape((nc,) + tuple(nq1[k] if j == k else 1 for j in range(d)))
            x[..., k] = np.broadcast_to(xk, (nc,) + tuple(nq1)).reshape(nc, nq)

        # global dofs
        loc_mesh = np.meshgrid(*[np.arange(DEGREE + 1)] * d, indexing="ij")
        loc_ids = [m.ravel() for m in loc_mesh]
        idx = [per_dir[k][1][cell_ids[k]][:, loc_ids[k]] for k in range(d)]
        dofs = np.ravel_multi_index(idx, self.shape)
        return QuadTable(N=N, dN=dN, d2N=d2N, w=w, x=x, dofs=dofs)

    @cached_property
    def greville_points(self):
        """Greville points of all functions, shape (n_basis, d); periodic directions use support centres."""
        pts = []
        for b in self.bases:
            pts.append(b.greville() if not b.periodic else (np.arange(b.n_basis) - 1.0) * b.h % b.length)
        mesh = np.meshgrid(*pts, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)


def _parse_side(side, d):
    if len(side) != 3 or side[0] != "x" or side[2] not in "+-" or not side[1].isdigit():
        raise ValueError(f"bad side name {side!r}; expected e.g. 'x2+'")
    axis = int(side[1]) - 1
    if not 0 <= axis < d:
        raise ValueError(f"side {side!r} outside dimension {d}")
    return axis, side[2]
