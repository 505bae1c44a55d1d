r"""Direct problem solvers.

Discretization: the time derivative is the increment convolution of
:mod:`fracinv.fracops` (L1 for the fractional power kernel, optionally with
starting corrections), the elliptic part uses the stencils of
:mod:`fracinv.domain`, and :math:`A` and :math:`f` are implicit. At every
level the nonlinear system

.. math::

    c_0 u_n + H_n - A u_n - f(u_n, t_n, \cdot) = 0 \quad \text{(interior)},
    \qquad B u_n = g(t_n) \quad \text{(boundary)}

is solved by damped Newton, where :math:`H_n` collects the memory.
When starting corrections are active the first :math:`m` levels are coupled
and solved as one block.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from fracinv.domain import (
    BoundaryCondition,
    EllipticOperator,
    SpaceGrid,
    SpatialField,
    apply_operator,
    check_ellipticity,
)
from fracinv.errors import ParameterError, ShapeError, SolverError
from fracinv.fracops import (
    FractionalPowerKernel,
    Kernel,
    TimeGrid,
    memory_coefficients,
    starting_weights,
)
from fracinv.reactions import Reaction, lipschitz_bound

__all__ = [
    "DirectProblem",
    "SolveReport",
    "TimeOperator",
    "Trajectory",
    "history_term",
    "picard_contraction",
    "solve_l1",
    "solve_picard",
    "time_derivative",
]

MAX_NEWTON = 50
MAX_HALVINGS = 8


# {{{ containers


@dataclass(frozen=True)
class Trajectory:
    """Space-time field ``values[n, i] = u(t_n, x_i)``."""

    time_grid: TimeGrid
    space_grid: SpaceGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        shape = (self.time_grid.n_steps + 1, self.space_grid.n_nodes)
        if values.shape != shape:
            raise ShapeError(f"trajectory has shape {values.shape}, expected {shape}")
        object.__setattr__(self, "values", values)

    @property
    def u0(self) -> SpatialField:
        return SpatialField(self.space_grid, self.values[0])

    def at(self, n: int) -> SpatialField:
        return SpatialField(self.space_grid, self.values[n])


@dataclass
class SolveReport:
    method: str
    newton_iterations: np.ndarray
    max_residual: np.ndarray
    wall_time: float = 0.0
    positivity_min: float = math.nan
    flags: list[str] = field(default_factory=list)
    #: memory term H_n per level (only when requested)
    history: np.ndarray | None = field(default=None, repr=False)
    #: Picard only
    iterations: int = 0
    gaps: list[float] = field(default_factory=list)
    kappa: float = math.nan

    def to_text(self, include_wall_time: bool = True) -> str:
        lines = [
            f"method = {self.method}",
            f"steps = {self.max_residual.size}",
            f"newton_iterations_total = {int(self.newton_iterations.sum())}",
            f"newton_iterations_max = {int(self.newton_iterations.max(initial=0))}",
            f"max_residual = {float(self.max_residual.max(initial=0.0)):.6e}",
            f"positivity_min = {self.positivity_min:.12e}",
        ]
        if self.method == "picard":
            lines += [
                f"picard_iterations = {self.iterations}",
                f"contraction_factor = {self.kappa:.6e}",
                "picard_gaps = " + ", ".join(f"{g:.3e}" for g in self.gaps),
            ]
        lines.append("flags = " + (", ".join(self.flags) if self.flags else "none"))
        if include_wall_time:
            lines.append(f"wall_time = {self.wall_time:.3f}")
        return "\n".join(lines) + "\n"


# }}}


# {{{ time operator


@dataclass(frozen=True)
class TimeOperator:
    r"""Discrete :math:`D_t[u - u_0]` at every level:

    .. math::

        D_n u = \sum_{k=1}^{n} c_{n-k} (u_k - u_{k-1})
            + \sum_{j=1}^{m} \omega_{n,j} (u_j - u_0).
    """

    c: np.ndarray
    omega: np.ndarray

    @classmethod
    def build(cls, kernel: Kernel, grid: TimeGrid, corrected: bool = True) -> TimeOperator:
        c = memory_coefficients(kernel, grid)
        if corrected and isinstance(kernel, FractionalPowerKernel):
            omega = grid.tau ** (-kernel.beta) * starting_weights(kernel.beta, grid.n_steps).omega
        else:
            omega = np.zeros((grid.n_steps + 1, 0))
        return cls(c, omega)

    @property
    def n_start(self) -> int:
        return self.omega.shape[1]

    def start_block(self) -> np.ndarray:
        """Matrix ``C`` with ``D_n u = sum_k C[n-1, k] u_k`` for ``n <= m``."""
        m = self.n_start
        C = np.zeros((m, m + 1))
        for n in range(1, m + 1):
            for k in range(1, n + 1):
                C[n - 1, k] += self.c[n - k]
                C[n - 1, k - 1] -= self.c[n - k]
            C[n - 1, 1:] += self.omega[n]
            C[n - 1, 0] -= self.omega[n].sum()
        return C

    def history(self, U: np.ndarray, inc: np.ndarray, n: int) -> np.ndarray:
        """Memory term :math:`H_n = D_n u - c_0 u_n` for ``n > m``.

        ``inc[k - 1] = U[k] - U[k - 1]`` must be available for ``k < n``.
        """
        H = self.c[n - 1 : 0 : -1] @ inc[: n - 1] - self.c[0] * U[n - 1]
        m = self.n_start
        if m:
            H = H + self.omega[n] @ (U[1 : m + 1] - U[0])
        return H

    def apply(self, U: np.ndarray) -> np.ndarray:
        """Return :math:`D_n u` for every level (row 0 is zero)."""
        out = np.zeros_like(U)
        inc = np.diff(U, axis=0)
        for n in range(1, U.shape[0]):
            out[n] = self.c[n - 1 :: -1][:n] @ inc[:n]
            if self.n_start:
                out[n] += self.omega[n] @ (U[1 : self.n_start + 1] - U[0])
        return out


def history_term(traj: Trajectory, op: TimeOperator, n: int) -> np.ndarray:
    """Recompute the memory term of level *n* from a stored trajectory."""
    U = traj.values
    return op.history(U, np.diff(U, axis=0), n)


# }}}


# {{{ level solver


class _Nonlinearity:
    def f(self, U: np.ndarray, n: int) -> np.ndarray:
        raise NotImplementedError

    def f_w(self, U: np.ndarray, n: int) -> np.ndarray:
        raise NotImplementedError


class _ReactionTerm(_Nonlinearity):
    def __init__(self, reaction: Reaction, t: np.ndarray) -> None:
        self.reaction = reaction
        self.t = t

    def f(self, U, n):
        return self.reaction.f(U, float(self.t[n]))

    def f_w(self, U, n):
        return self.reaction.f_w(U, float(self.t[n]))


class _LinearTerm(_Nonlinearity):
    """:math:`f = s_n + \\xi u`."""

    def __init__(self, source: np.ndarray, xi: float) -> None:
        self.source = source
        self.xi = xi

    def f(self, U, n):
        return self.source[n] + self.xi * U

    def f_w(self, U, n):
        return np.full(U.shape, self.xi)


class _Marcher:
    """Owns the sparse pieces shared by all levels of one solve."""

    def __init__(
        self,
        op: EllipticOperator,
        bc: BoundaryCondition,
        time_op: TimeOperator,
        term: _Nonlinearity,
        tol: float,
        max_newton: int,
    ) -> None:
        g = op.grid
        self.M = g.n_nodes
        self.A = op.matrix
        self.B = bc.rows
        self.g = bc.g
        self.bnd = g.boundary
        self.mask = np.zeros(self.M)
        self.mask[g.interior] = 1.0
        self.P = sp.diags(self.mask)
        self.time_op = time_op
        self.term = term
        self.tol = tol
        self.max_newton = max_newton
        self._base: dict[bytes, sp.csr_matrix] = {}
        self._lu_key: tuple | None = None
        self._lu = None
        self.flags: set[str] = set()

    def _base_matrix(self, C: np.ndarray) -> sp.csr_matrix:
        key = C.tobytes() + bytes(C.shape)
        if key not in self._base:
            b = C.shape[0]
            I = sp.identity(b, format="csr")
            self._base[key] = (
                sp.kron(sp.csr_matrix(C), self.P) - sp.kron(I, self.A) + sp.kron(I, self.B)
            ).tocsc()
        return self._base[key]

    def _solve(self, C: np.ndarray, fw: np.ndarray, rhs: np.ndarray) -> np.ndarray:
        fw_int = (fw * self.mask).ravel()
        key = (C.tobytes(), fw_int.tobytes())
        if key != self._lu_key:
            J = self._base_matrix(C) - sp.diags(fw_int)
            self._lu = spla.splu(J.tocsc())
            self._lu_key = key
        return self._lu.solve(rhs.ravel()).reshape(rhs.shape)

    def residual(self, C, const, U, levels) -> np.ndarray:
        R = np.empty_like(U)
        for i, n in enumerate(levels):
            interior = C[i] @ U + const[i] - self.A @ U[i] - self.term.f(U[i], n)
            R[i] = self.mask * interior + self.B @ U[i]
            R[i, self.bnd] -= self.g[n]
        return R

    def solve_levels(
        self, C: np.ndarray, const: np.ndarray, guess: np.ndarray, levels: list[int]
    ) -> tuple[np.ndarray, int, float]:
        """Newton for levels ``levels`` with ``D U = C U + const``."""
        U = guess.copy()
        R = self.residual(C, const, U, levels)
        r = float(np.max(np.abs(R)))
        it = 0
        while r > self.tol:
            if it >= self.max_newton:
                raise SolverError(
                    f"Newton did not converge, residual {r:.3e}", step=levels[0]
                )
            fw = np.array([self.term.f_w(U[i], n) for i, n in enumerate(levels)])
            dU = -self._solve(C, fw, R)
            step = 1.0
            for _ in range(MAX_HALVINGS + 1):
                trial = U + step * dU
                Rt = self.residual(C, const, trial, levels)
                rt = float(np.max(np.abs(Rt)))
                if rt < r:
                    break
                step *= 0.5
            it += 1
            if not rt < r:
                # no decrease: accept when the update is at round-off level
                if np.max(np.abs(dU)) <= 1.0e-13 * max(1.0, float(np.max(np.abs(U)))):
                    self.flags.add("residual limited by round-off")
                    break
                if step < 1.0:
                    self.flags.add("newton damping exhausted")
            U, R, r = trial, Rt, rt
        return U, it, r


# }}}


# {{{ problem bundle and L1 solver


def _kernel(kernel: float | Kernel) -> Kernel:
    if isinstance(kernel, Kernel):
        return kernel
    return FractionalPowerKernel(float(kernel))


def _values(u0: SpatialField | np.ndarray, grid: SpaceGrid) -> np.ndarray:
    if isinstance(u0, SpatialField):
        if u0.grid != grid:
            raise ShapeError("initial field lives on a different grid")
        return u0.values
    arr = np.asarray(u0, dtype=np.float64).ravel()
    if arr.size != grid.n_nodes:
        raise ShapeError(f"initial field has {arr.size} values, grid has {grid.n_nodes}")
    return arr


def _march(
    op: EllipticOperator,
    bc: BoundaryCondition,
    u0: np.ndarray,
    time_op: TimeOperator,
    term: _Nonlinearity,
    tol: float,
    max_newton: int,
    keep_history: bool = False,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray | None, set[str]]:
    N = bc.time_grid.n_steps
    M = op.grid.n_nodes
    marcher = _Marcher(op, bc, time_op, term, tol, max_newton)

    U = np.empty((N + 1, M))
    U[0] = u0
    inc = np.empty((N, M))
    its = np.zeros(N, dtype=int)
    res = np.zeros(N)
    hist = np.zeros((N + 1, M)) if keep_history else None

    m = time_op.n_start
    if m:
        C = time_op.start_block()
        const = np.outer(C[:, 0], u0)
        guess = np.tile(u0, (m, 1))
        levels = list(range(1, m + 1))
        block, it, r = marcher.solve_levels(C[:, 1:], const, guess, levels)
        U[1 : m + 1] = block
        inc[:m] = np.diff(U[: m + 1], axis=0)
        its[:m] = it
        res[:m] = r
        if keep_history:
            for i, n in enumerate(levels):
                hist[n] = C[i] @ U[: m + 1] - time_op.c[0] * U[n]

    C1 = np.array([[time_op.c[0]]])
    for n in range(m + 1, N + 1):
        H = time_op.history(U, inc, n)
        if keep_history:
            hist[n] = H
        sol, it, r = marcher.solve_levels(C1, H[None, :], U[n - 1][None, :], [n])
        U[n] = sol[0]
        inc[n - 1] = U[n] - U[n - 1]
        its[n - 1] = it
        res[n - 1] = r
    return U, its, res, hist, marcher.flags


@dataclass(frozen=True)
class DirectProblem:
    """Everything needed for one forward solve."""

    op: EllipticOperator
    bc: BoundaryCondition
    reaction: Reaction
    u0: SpatialField
    kernel: Kernel

    @property
    def time_grid(self) -> TimeGrid:
        return self.bc.time_grid

    @property
    def space_grid(self) -> SpaceGrid:
        return self.op.grid

    @property
    def beta(self) -> float:
        if not isinstance(self.kernel, FractionalPowerKernel):
            raise ParameterError("problem kernel is not a fractional power")
        return self.kernel.beta

    def with_reaction(self, reaction: Reaction) -> DirectProblem:
        return DirectProblem(self.op, self.bc, reaction, self.u0, self.kernel)

    def solve(self, **kwargs) -> tuple[Trajectory, SolveReport]:
        return solve_l1(self.op, self.bc, self.reaction, self.u0, self.kernel, **kwargs)


def solve_l1(
    op: EllipticOperator,
    bc: BoundaryCondition,
    reaction: Reaction,
    u0: SpatialField | np.ndarray,
    kernel: float | Kernel,
    *,
    tol: float = 1.0e-9,
    max_newton: int = MAX_NEWTON,
    corrected: bool = True,
    keep_history: bool = False,
) -> tuple[Trajectory, SolveReport]:
    """Implicit L1 time stepping with Newton at every level.

    ``kernel`` is either the order :math:`\\beta` or a :class:`Kernel`.
    ``corrected`` enables starting corrections (fractional power kernel only).
    """
    if not tol > 0.0:
        raise ParameterError(f"tolerance must be positive: {tol}")
    if op.grid != bc.grid or reaction.grid != op.grid:
        raise ShapeError("operator, boundary condition and reaction grids differ")
    pure_reaction = not (np.any(op.a) or np.any(op.drift))
    if not pure_reaction:
        check_ellipticity(op)
    kernel = _kernel(kernel)
    time_grid = bc.time_grid
    kernel.check(time_grid)
    start = time.perf_counter()

    time_op = TimeOperator.build(kernel, time_grid, corrected)
    term = _ReactionTerm(reaction, time_grid.nodes)
    U, its, res, hist, flags = _march(
        op, bc, _values(u0, op.grid), time_op, term, tol, max_newton, keep_history
    )
    traj = Trajectory(time_grid, op.grid, U)
    report = SolveReport(
        method="l1-corrected" if time_op.n_start else "l1",
        newton_iterations=its,
        max_residual=res,
        wall_time=time.perf_counter() - start,
        positivity_min=float(U.min()),
        flags=sorted(flags | ({"elliptic part absent"} if pure_reaction else set())),
        history=hist,
    )
    return traj, report


# }}}


# {{{ Picard solver


def _linear_solve(
    op, bc_hom, time_op, source, xi, tol, max_newton
) -> np.ndarray:
    M = op.grid.n_nodes
    U, *_ = _march(op, bc_hom, np.zeros(M), time_op, _LinearTerm(source, xi), tol, max_newton)
    return U


def _q_norm(op, bc_hom, time_op, xi, shape, tol, seed: int, iterations: int = 4) -> float:
    r"""Power-iteration estimate of the sup-norm of :math:`\varphi \mapsto
    D_t y`, where :math:`D_t y = (A + \xi) y + \varphi`, :math:`y(0) = 0`."""
    rng = np.random.default_rng(seed)
    interior = op.grid.interior
    phi = np.zeros(shape)
    phi[1:, interior] = rng.uniform(-1.0, 1.0, size=(shape[0] - 1, interior.size))
    best = 0.0
    for _ in range(iterations):
        y = _linear_solve(op, bc_hom, time_op, phi, xi, tol, MAX_NEWTON)
        q = np.zeros(shape)
        q[1:, interior] = (op.matrix @ y[1:].T).T[:, interior] + xi * y[1:, interior] + phi[1:, interior]
        ratio = float(np.max(np.abs(q)) / np.max(np.abs(phi)))
        best = max(best, ratio)
        phi = q / np.max(np.abs(q))
        phi[0] = 0.0
    return best


@dataclass(frozen=True)
class ContractionEstimate:
    kappa: float
    q_norm: float
    lipschitz: float
    xi: float
    #: largest T with kappa < 1 for the same q_norm and lipschitz
    t_max: float


def picard_contraction(
    problem: DirectProblem,
    rho: float,
    *,
    xi: float = 0.0,
    safety: float = 1.1,
    seed: int = 0,
    tol: float = 1.0e-11,
) -> ContractionEstimate:
    r"""Contraction factor of the whole-trajectory fixed-point map,

    .. math::

        \kappa = \frac{\|Q\|}{\beta \Gamma(\beta)}
            \left(T^\beta + 2 T^{\beta/2}\right) (K + |\xi|),

    with :math:`K` the lattice Lipschitz bound (times ``safety``) over the
    range of :math:`u_0` inflated by ``rho``.
    """
    beta = problem.beta
    tg = problem.time_grid
    time_op = TimeOperator.build(problem.kernel, tg)
    bc_hom = BoundaryCondition(problem.bc.grid, tg, problem.bc.case, 0.0, problem.bc.omega)
    shape = (tg.n_steps + 1, problem.space_grid.n_nodes)
    q = _q_norm(problem.op, bc_hom, time_op, xi, shape, tol, seed)
    u0 = problem.u0.values
    K = safety * lipschitz_bound(problem.reaction, (u0.min(), u0.max()), rho, tg)
    factor = q / (beta * math.gamma(beta)) * (K + abs(xi))

    def kappa_of(T: float) -> float:
        return factor * (T**beta + 2.0 * T ** (beta / 2.0))

    if factor <= 0.0:
        t_max = math.inf
    else:
        lo, hi = 0.0, 1.0
        while kappa_of(hi) < 1.0:
            hi *= 2.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            lo, hi = (mid, hi) if kappa_of(mid) < 1.0 else (lo, mid)
        t_max = lo
    return ContractionEstimate(kappa_of(tg.T), q, K, xi, t_max)


def solve_picard(
    problem: DirectProblem,
    rho: float = 0.5,
    max_iters: int = 100,
    *,
    tol: float = 1.0e-10,
    xi: float = 0.0,
    seed: int = 0,
) -> tuple[Trajectory, SolveReport]:
    r"""Whole-trajectory fixed-point iteration.

    With :math:`\hat u(t, x) = u_0(x)` and :math:`u = \hat u + v`, iterate

    .. math::

        D_t v^{k+1} = (A + \xi) v^{k+1} + f(u_0 + v^k) + A u_0 - \xi v^k,

    each step being one linear solve with the same discretization as
    :func:`solve_l1`. The iteration is refused when the contraction estimate
    of :func:`picard_contraction` is not below one.
    """
    op, bc = problem.op, problem.bc
    tg = problem.time_grid
    if not bc.time_constant:
        raise ParameterError("Picard solver needs time-independent boundary data")
    start = time.perf_counter()

    est = picard_contraction(problem, rho, xi=xi, seed=seed)
    if not est.kappa < 1.0:
        raise SolverError(
            f"contraction factor {est.kappa:.3f} >= 1; largest admissible T is {est.t_max:.4g}"
        )

    time_op = TimeOperator.build(problem.kernel, tg)
    u0 = problem.u0.values
    M = op.grid.n_nodes
    N = tg.n_steps
    Au0 = op.matrix @ u0
    # boundary data of v: g - B u0 (constant in time)
    g_v = bc.g[0] - (bc.rows @ u0)[op.grid.boundary]
    bc_v = BoundaryCondition(bc.grid, tg, bc.case, g_v, bc.omega)

    # boundary residual of Psi = -(A u0 + f(u0, t, x)), one-sided values
    Au0_diag = apply_operator(op, problem.u0).values
    psi_bnd = max(
        float(np.max(np.abs(Au0_diag[op.grid.boundary] + problem.reaction.f(u0, float(t))[op.grid.boundary])))
        for t in (0.0, tg.T)
    )

    v = np.zeros((N + 1, M))
    gaps: list[float] = []
    growth = 0
    converged = False
    for k in range(1, max_iters + 1):
        source = np.array(
            [problem.reaction.f(u0 + v[n], float(t)) + Au0 - xi * v[n] for n, t in enumerate(tg.nodes)]
        )
        v_new, *_ = _march(op, bc_v, np.zeros(M), time_op, _LinearTerm(source, xi), 1.0e-11, MAX_NEWTON)
        gap = float(np.max(np.abs(v_new - v)))
        gaps.append(gap)
        v = v_new
        if len(gaps) > 1 and gap > gaps[-2]:
            growth += 1
            if growth >= 3:
                raise SolverError(f"Picard iteration diverges, gap {gap:.3e}", step=k)
        else:
            growth = 0
        # a-priori style bound on the distance to the fixed point
        if gap <= tol or est.kappa / (1.0 - est.kappa) * gap <= tol:
            converged = True
            break
    if not converged:
        raise SolverError(f"Picard iteration stalled at gap {gaps[-1]:.3e}", step=max_iters)

    U = u0[None, :] + v
    traj = Trajectory(tg, op.grid, U)
    iterations = len(gaps) - 1 if len(gaps) > 1 and gaps[-1] == 0.0 else len(gaps)
    report = SolveReport(
        method="picard",
        newton_iterations=np.zeros(N, dtype=int),
        max_residual=np.zeros(N),
        wall_time=time.perf_counter() - start,
        positivity_min=float(U.min()),
        flags=[f"psi_boundary_residual={psi_bnd:.3e}"],
        iterations=iterations,
        gaps=gaps,
        kappa=est.kappa,
    )
    return traj, report


# }}}


def time_derivative(traj: Trajectory) -> Trajectory:
    """Difference quotients in time: central inside, one-sided at the ends."""
    if traj.time_grid.n_steps < 2:
        raise ParameterError("time derivative needs at least two steps")
    ut = np.gradient(traj.values, traj.time_grid.tau, axis=0)
    return Trajectory(traj.time_grid, traj.space_grid, ut)
