r"""Spatial grids, the elliptic operator and the boundary operators.

The operator is

.. math::

    A u = \sum_{i,j} a_{ij}(x) \partial_i \partial_j u + \sum_j a_j(x) \partial_j u

on an interval or an axis-aligned rectangle. Nodes are numbered in C order
(the last axis varies fastest).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from fracinv.errors import DataError, HypothesisViolation, ParameterError, ShapeError
from fracinv.fracops import TimeGrid

__all__ = [
    "BoundaryCondition",
    "EllipticOperator",
    "SpaceGrid",
    "SpatialField",
    "apply_operator",
    "check_ellipticity",
    "enforce_boundary",
    "steady_solve",
]


# {{{ grid


@dataclass(frozen=True)
class SpaceGrid:
    """Uniform grid on :math:`[0, L_1]` or :math:`[0, L_1] \\times [0, L_2]`."""

    extents: tuple[float, ...]
    n_cells: tuple[int, ...]

    def __post_init__(self) -> None:
        extents = tuple(float(v) for v in np.atleast_1d(self.extents))
        n_cells = tuple(int(v) for v in np.atleast_1d(self.n_cells))
        if len(extents) not in (1, 2) or len(extents) != len(n_cells):
            raise ShapeError("grid must be 1D or 2D with one cell count per axis")
        if any(not (math.isfinite(v) and v > 0) for v in extents):
            raise ParameterError(f"extents must be positive: {extents}")
        if any(n < 2 for n in n_cells):
            raise ParameterError(f"need at least 2 cells per axis: {n_cells}")
        object.__setattr__(self, "extents", extents)
        object.__setattr__(self, "n_cells", n_cells)

    @classmethod
    def interval(cls, length: float, n_cells: int) -> SpaceGrid:
        return cls((length,), (n_cells,))

    @classmethod
    def rectangle(cls, extents: tuple[float, float], n_cells: tuple[int, int]) -> SpaceGrid:
        return cls(tuple(extents), tuple(n_cells))

    @property
    def dim(self) -> int:
        return len(self.extents)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(n + 1 for n in self.n_cells)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.shape))

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.extents, self.n_cells))

    @cached_property
    def axes(self) -> tuple[np.ndarray, ...]:
        return tuple(
            np.linspace(0.0, L, n + 1) for L, n in zip(self.extents, self.n_cells)
        )

    @cached_property
    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``(n_nodes, dim)``."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @cached_property
    def multi_index(self) -> np.ndarray:
        """Per-axis integer index of every node, shape ``(n_nodes, dim)``."""
        return np.stack(np.unravel_index(np.arange(self.n_nodes), self.shape), axis=1)

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        idx = self.multi_index
        mask = np.zeros(self.n_nodes, dtype=bool)
        for d, n in enumerate(self.n_cells):
            mask |= (idx[:, d] == 0) | (idx[:, d] == n)
        return mask

    @property
    def boundary(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_mask)

    @property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_mask)

    @cached_property
    def corner_mask(self) -> np.ndarray:
        """Boundary nodes lying on more than one face (2D corners)."""
        idx = self.multi_index
        faces = np.zeros(self.n_nodes, dtype=int)
        for d, n in enumerate(self.n_cells):
            faces += (idx[:, d] == 0) | (idx[:, d] == n)
        return faces > 1

    @cached_property
    def outward_normals(self) -> np.ndarray:
        """Unit outward normal at every boundary node, shape ``(n_bnd, dim)``.

        Corner nodes get the normalized average of the adjacent face normals.
        """
        idx = self.multi_index[self.boundary]
        nu = np.zeros((idx.shape[0], self.dim))
        for d, n in enumerate(self.n_cells):
            nu[idx[:, d] == 0, d] -= 1.0
            nu[idx[:, d] == n, d] += 1.0
        return nu / np.linalg.norm(nu, axis=1, keepdims=True)

    def sample(self, fn: Callable[..., np.ndarray]) -> np.ndarray:
        """Evaluate ``fn(x)`` or ``fn(x, y)`` at every node."""
        out = fn(*self.coords.T)
        return np.broadcast_to(np.asarray(out, dtype=np.float64), (self.n_nodes,)).copy()

    def describe_node(self, index: int) -> str:
        x = ", ".join(f"{c:.6g}" for c in self.coords[index])
        return f"node {index} (x = {x})"


@dataclass(frozen=True)
class SpatialField:
    """Real values on the nodes of a :class:`SpaceGrid`."""

    grid: SpaceGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64).ravel()
        if values.size != self.grid.n_nodes:
            raise ShapeError(
                f"field has {values.size} values, grid has {self.grid.n_nodes} nodes"
            )
        if not np.all(np.isfinite(values)):
            raise DataError(
                f"non-finite field value at {self.grid.describe_node(int(np.flatnonzero(~np.isfinite(values))[0]))}"
            )
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(cls, grid: SpaceGrid, fn: Callable[..., np.ndarray]) -> SpatialField:
        return cls(grid, grid.sample(fn))

    @classmethod
    def constant(cls, grid: SpaceGrid, value: float) -> SpatialField:
        return cls(grid, np.full(grid.n_nodes, float(value)))


# }}}


# {{{ elliptic operator


@dataclass(frozen=True)
class EllipticOperator:
    """Second-order operator with node-wise coefficients.

    ``a`` has shape ``(dim, dim, n_nodes)`` and must be symmetric in its
    first two axes; ``drift`` has shape ``(dim, n_nodes)``.
    """

    grid: SpaceGrid
    a: np.ndarray
    drift: np.ndarray

    def __post_init__(self) -> None:
        g = self.grid
        a = np.asarray(self.a, dtype=np.float64)
        drift = np.asarray(self.drift, dtype=np.float64)
        if a.shape != (g.dim, g.dim, g.n_nodes):
            a = np.broadcast_to(a.reshape(g.dim, g.dim, -1), (g.dim, g.dim, g.n_nodes))
        if drift.shape != (g.dim, g.n_nodes):
            drift = np.broadcast_to(drift.reshape(g.dim, -1), (g.dim, g.n_nodes))
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(drift))):
            raise DataError("operator coefficients must be finite")
        if not np.allclose(a, np.swapaxes(a, 0, 1), rtol=0.0, atol=1.0e-14):
            raise DataError("principal coefficients must be symmetric")
        object.__setattr__(self, "a", np.ascontiguousarray(a))
        object.__setattr__(self, "drift", np.ascontiguousarray(drift))

    @classmethod
    def laplacian(cls, grid: SpaceGrid, diffusivity: float = 1.0) -> EllipticOperator:
        return cls.constant(grid, diffusivity * np.eye(grid.dim), np.zeros(grid.dim))

    @classmethod
    def constant(
        cls, grid: SpaceGrid, a: np.ndarray, drift: np.ndarray | None = None
    ) -> EllipticOperator:
        a = np.asarray(a, dtype=np.float64).reshape(grid.dim, grid.dim)
        drift = np.zeros(grid.dim) if drift is None else np.asarray(drift, dtype=np.float64)
        return cls(
            grid,
            np.repeat(a[:, :, None], grid.n_nodes, axis=2),
            np.repeat(drift.reshape(grid.dim, 1), grid.n_nodes, axis=1),
        )

    @classmethod
    def zero(cls, grid: SpaceGrid) -> EllipticOperator:
        return cls.constant(grid, np.zeros((grid.dim, grid.dim)))

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        """Centered-difference matrix; rows of boundary nodes are empty."""
        g = self.grid
        interior = g.interior
        idx = g.multi_index[interior]
        h = g.spacing
        rows: list[np.ndarray] = []
        cols: list[np.ndarray] = []
        vals: list[np.ndarray] = []

        def add(offsets: tuple[int, ...], coef: np.ndarray) -> None:
            nb = np.ravel_multi_index(tuple((idx + np.array(offsets)).T), g.shape)
            rows.append(interior)
            cols.append(nb)
            vals.append(coef)

        zero = (0,) * g.dim
        for d in range(g.dim):
            e = tuple(1 if k == d else 0 for k in range(g.dim))
            me = tuple(-v for v in e)
            ad = self.a[d, d, interior] / h[d] ** 2
            bd = self.drift[d, interior] / (2.0 * h[d])
            add(e, ad + bd)
            add(me, ad - bd)
            add(zero, -2.0 * ad)

        if g.dim == 2:
            c = 2.0 * self.a[0, 1, interior] / (4.0 * h[0] * h[1])
            add((1, 1), c)
            add((-1, -1), c)
            add((1, -1), -c)
            add((-1, 1), -c)

        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(g.n_nodes, g.n_nodes),
        )

    @cached_property
    def min_diagonal(self) -> float:
        diag = self.matrix.diagonal()[self.grid.interior]
        return float(diag.min()) if diag.size else 0.0


def _second_derivative(u: np.ndarray, h: float, axis: int) -> np.ndarray:
    u = np.moveaxis(u, axis, 0)
    out = np.empty_like(u)
    out[1:-1] = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / h**2
    if u.shape[0] >= 4:
        out[0] = (2.0 * u[0] - 5.0 * u[1] + 4.0 * u[2] - u[3]) / h**2
        out[-1] = (2.0 * u[-1] - 5.0 * u[-2] + 4.0 * u[-3] - u[-4]) / h**2
    else:
        out[0] = out[1]
        out[-1] = out[-2]
    return np.moveaxis(out, 0, axis)


def _check_grid(expected: SpaceGrid, got: SpaceGrid) -> None:
    if expected != got:
        raise ShapeError(f"grid mismatch: {got} vs {expected}")


def apply_operator(op: EllipticOperator, u: SpatialField) -> SpatialField:
    """Apply :math:`A` with centered differences.

    Interior values coincide with ``op.matrix @ u``; boundary nodes carry
    second-order one-sided values meant for diagnostics only.
    """
    _check_grid(op.grid, u.grid)
    g = op.grid
    field_ = u.values.reshape(g.shape)
    h = g.spacing
    edge = 2 if min(g.shape) >= 3 else 1
    grads = [np.gradient(field_, h[d], axis=d, edge_order=edge) for d in range(g.dim)]

    out = np.zeros(g.shape)
    for d in range(g.dim):
        out += op.a[d, d].reshape(g.shape) * _second_derivative(field_, h[d], d)
        out += op.drift[d].reshape(g.shape) * grads[d]
    if g.dim == 2:
        cross = np.gradient(grads[0], h[1], axis=1, edge_order=edge)
        out += 2.0 * op.a[0, 1].reshape(g.shape) * cross

    values = out.ravel()
    interior = g.interior
    values[interior] = (op.matrix @ u.values)[interior]
    return SpatialField(g, values)


def check_ellipticity(op: EllipticOperator) -> float:
    """Smallest eigenvalue of :math:`[a_{ij}(x)]` over all nodes."""
    a = np.moveaxis(op.a, 2, 0)
    eig = np.linalg.eigvalsh(a)[:, 0]
    worst = int(np.argmin(eig))
    c = float(eig[worst])
    if not c > 0.0:
        raise HypothesisViolation(
            f"operator is not uniformly elliptic, smallest eigenvalue {c:.6g}",
            where=op.grid.describe_node(worst),
        )
    return c


# }}}


# {{{ boundary conditions

DIRICHLET = "dirichlet"
OBLIQUE = "oblique"


def _sample_boundary_data(
    grid: SpaceGrid, time_grid: TimeGrid, g: float | Callable | np.ndarray
) -> np.ndarray:
    nb = grid.boundary.size
    shape = (time_grid.n_steps + 1, nb)
    if callable(g):
        xb = grid.coords[grid.boundary]
        table = np.array(
            [np.broadcast_to(np.asarray(g(t, *xb.T), dtype=np.float64), (nb,)) for t in time_grid.nodes]
        )
    else:
        arr = np.asarray(g, dtype=np.float64)
        if arr.ndim == 0:
            table = np.full(shape, float(arr))
        elif arr.shape == (nb,):
            table = np.tile(arr, (shape[0], 1))
        else:
            table = arr
    if table.shape != shape:
        raise ShapeError(f"boundary data has shape {table.shape}, expected {shape}")
    if not np.all(np.isfinite(table)):
        raise DataError("boundary data must be finite")
    return table


@dataclass(frozen=True)
class BoundaryCondition:
    r"""Either :math:`u = g` (case I) or :math:`\omega \cdot \nabla u = g` (case II).

    ``g`` is tabulated on ``(time node, boundary node)``; ``omega`` holds one
    direction per boundary node (case II only).
    """

    grid: SpaceGrid
    time_grid: TimeGrid
    case: str
    g: np.ndarray
    omega: np.ndarray | None = field(default=None)

    def __post_init__(self) -> None:
        if self.case not in (DIRICHLET, OBLIQUE):
            raise ParameterError(f"unknown boundary case {self.case!r}")
        table = _sample_boundary_data(self.grid, self.time_grid, self.g)
        object.__setattr__(self, "g", table)
        if self.case == OBLIQUE:
            nb = self.grid.boundary.size
            omega = self.omega
            if omega is None:
                omega = self.grid.outward_normals
            omega = np.asarray(omega, dtype=np.float64)
            if omega.ndim == 1:
                omega = np.tile(omega, (nb, 1))
            if omega.shape != (nb, self.grid.dim):
                raise ShapeError(f"omega has shape {omega.shape}, expected {(nb, self.grid.dim)}")
            dots = np.einsum("ij,ij->i", omega, self.grid.outward_normals)
            bad = np.flatnonzero(~(dots > 0.0))
            if bad.size:
                node = int(self.grid.boundary[bad[0]])
                raise HypothesisViolation(
                    f"oblique direction must point outward, omega.nu = {dots[bad[0]]:.3g}",
                    where=self.grid.describe_node(node),
                )
            object.__setattr__(self, "omega", omega)

    @classmethod
    def dirichlet(
        cls, grid: SpaceGrid, time_grid: TimeGrid, g: float | Callable | np.ndarray = 0.0
    ) -> BoundaryCondition:
        return cls(grid, time_grid, DIRICHLET, g)

    @classmethod
    def oblique(
        cls,
        grid: SpaceGrid,
        time_grid: TimeGrid,
        g: float | Callable | np.ndarray = 0.0,
        omega: np.ndarray | None = None,
    ) -> BoundaryCondition:
        return cls(grid, time_grid, OBLIQUE, g, omega)

    @property
    def time_constant(self) -> bool:
        return bool(np.all(self.g == self.g[0]))

    @cached_property
    def rows(self) -> sp.csr_matrix:
        """Boundary relation :math:`B u = g` as a ``(n_nodes, n_nodes)`` matrix
        whose only non-empty rows belong to boundary nodes."""
        grid = self.grid
        bnd = grid.boundary
        M = grid.n_nodes
        if self.case == DIRICHLET:
            return sp.csr_matrix((np.ones(bnd.size), (bnd, bnd)), shape=(M, M))

        idx = grid.multi_index[bnd]
        h = grid.spacing
        rows, cols, vals = [], [], []

        def add(sel: np.ndarray, offset: np.ndarray, coef: np.ndarray) -> None:
            nb = np.ravel_multi_index(tuple((idx[sel] + offset).T), grid.shape)
            rows.append(bnd[sel])
            cols.append(nb)
            vals.append(coef)

        for d, n in enumerate(grid.n_cells):
            e = np.zeros(grid.dim, dtype=int)
            e[d] = 1
            w = self.omega[:, d]
            low = idx[:, d] == 0
            high = idx[:, d] == n
            mid = ~(low | high)
            # one-sided inward differences on faces normal to axis d
            add(low, e, w[low] / h[d])
            add(low, 0 * e, -w[low] / h[d])
            add(high, 0 * e, w[high] / h[d])
            add(high, -e, -w[high] / h[d])
            # centered differences along the face
            add(mid, e, w[mid] / (2.0 * h[d]))
            add(mid, -e, -w[mid] / (2.0 * h[d]))

        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(M, M),
        )


def enforce_boundary(bc: BoundaryCondition, u: SpatialField, t_index: int) -> SpatialField:
    """Return a copy of *u* whose boundary values satisfy the discrete
    boundary relation at time node ``t_index``.

    Case I overwrites the boundary values with :math:`g`. Case II keeps the
    interior values and solves the one-sided relations
    :math:`\\omega \\cdot \\nabla_h u = g` for the boundary values.
    """
    _check_grid(bc.grid, u.grid)
    if not 0 <= t_index <= bc.time_grid.n_steps:
        raise ParameterError(f"time index out of range: {t_index}")
    bnd = bc.grid.boundary
    values = u.values.copy()
    if bc.case == DIRICHLET:
        values[bnd] = bc.g[t_index]
        return SpatialField(u.grid, values)

    B = bc.rows[bnd]
    Bbb = B[:, bnd]
    values[bnd] = 0.0
    rhs = bc.g[t_index] - B @ values
    values[bnd] = spla.spsolve(Bbb.tocsc(), rhs)
    return SpatialField(u.grid, values)


def steady_solve(
    op: EllipticOperator,
    bc: BoundaryCondition,
    source: np.ndarray | None = None,
    t_index: int = 0,
) -> SpatialField:
    """Solve :math:`A u = -s` in the interior with the boundary relation of *bc*."""
    g = op.grid
    interior = np.zeros(g.n_nodes)
    interior[g.interior] = 1.0
    system = sp.diags(interior) @ op.matrix + bc.rows
    rhs = np.zeros(g.n_nodes)
    if source is not None:
        rhs[g.interior] = -np.asarray(source, dtype=np.float64)[g.interior]
    rhs[g.boundary] = bc.g[t_index]
    return SpatialField(g, spla.spsolve(system.tocsc(), rhs))


# }}}
