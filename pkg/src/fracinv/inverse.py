r"""Reconstruction of the reaction coefficient :math:`z(x)` from the
observation :math:`\int_0^T u(t, x) \,\mathrm{d}\mu(t) = d(x)`.

Two fixed-point maps are provided: one for a weighted Lebesgue measure
:math:`\mathrm{d}\mu = \varkappa(t) \mathrm{d}t` and one for a point mass at
:math:`t^*`. Both solve the forward problem for the current iterate and read
off a new :math:`z` from the equation itself, so at the true coefficient the
map is stationary.

:math:`z` only enters the equation at interior nodes; boundary values are
copied from the nearest interior node and ignored by all metrics.
"""

from __future__ import annotations

import dataclasses
import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from fracinv.domain import SpaceGrid, SpatialField, apply_operator
from fracinv.errors import (
    HypothesisViolation,
    IllPosedError,
    ParameterError,
    ShapeError,
)
from fracinv.forward import DirectProblem, TimeOperator, Trajectory
from fracinv.fracops import TimeGrid, TimeSeries, frac_integral

__all__ = [
    "DiracAt",
    "IllPosedWarning",
    "InverseProblemSpec",
    "MixedMeasure",
    "NoiseStudy",
    "ReconstructionReport",
    "UniquenessReport",
    "Weighted",
    "apply_measure",
    "kappa_weight",
    "noise_study",
    "reconstruct",
    "reconstruct_final_time",
    "reconstruct_weighted",
    "split_positive_negative",
    "uniqueness_experiment",
]

#: fraction of nodes with a floored denominator that triggers a warning
ILL_POSED_FRACTION = 0.05
#: consecutive warned iterations before escalation to an error
ILL_POSED_PATIENCE = 3


class IllPosedWarning(UserWarning):
    pass


# {{{ measures


@dataclass(frozen=True)
class DiracAt:
    """Point mass at ``t_star`` (snapped to the nearest time node)."""

    t_star: float
    mass: float = 1.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.t_star) and self.t_star > 0.0):
            raise ParameterError(f"point mass must sit at a positive time: t* = {self.t_star}")
        if not (math.isfinite(self.mass) and self.mass > 0.0):
            raise ParameterError(f"point mass must be positive: {self.mass}")

    def snap(self, grid: TimeGrid) -> tuple[int, float]:
        if self.t_star > grid.T * (1.0 + 1.0e-12):
            raise ParameterError(f"t* = {self.t_star} lies beyond T = {grid.T}")
        return grid.nearest(self.t_star)


@dataclass(frozen=True)
class Weighted:
    r""":math:`\mathrm{d}\mu = \varkappa(t) \mathrm{d}t` with node values of
    :math:`\varkappa \ge 0`, not identically zero."""

    varkappa: TimeSeries

    def __post_init__(self) -> None:
        v = self.varkappa.values
        if v.ndim != 1:
            raise ShapeError("weight must be a scalar time series")
        if np.any(v < 0.0):
            n = int(np.argmin(v))
            raise HypothesisViolation(f"weight is negative: {v[n]:.3e}", where=f"time node {n}")
        if not np.any(v > 0.0):
            raise HypothesisViolation("weight vanishes identically")

    @classmethod
    def uniform(cls, grid: TimeGrid, value: float = 1.0) -> Weighted:
        return cls(TimeSeries(grid, np.full(grid.n_steps + 1, float(value))))


@dataclass(frozen=True)
class MixedMeasure:
    """Finitely many point masses plus an optional weighted part.

    Supported by :func:`apply_measure` and :func:`uniqueness_experiment`
    only; no reconstruction map is available.
    """

    atoms: tuple[DiracAt, ...] = ()
    weighted: Weighted | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "atoms", tuple(self.atoms))
        if not self.atoms and self.weighted is None:
            raise ParameterError("empty measure")


Measure = DiracAt | Weighted | MixedMeasure


def _trapezoid(grid: TimeGrid) -> np.ndarray:
    q = np.full(grid.n_steps + 1, grid.tau)
    q[0] = q[-1] = 0.5 * grid.tau
    return q


def _check_series_grid(series: TimeSeries, grid: TimeGrid) -> None:
    if series.grid != grid:
        raise ShapeError(f"weight grid {series.grid} differs from trajectory grid {grid}")


def apply_measure(traj: Trajectory, mu: Measure) -> SpatialField:
    r"""Evaluate :math:`\int_0^T u(t, \cdot) \,\mathrm{d}\mu(t)` per node."""
    tg = traj.time_grid
    if isinstance(mu, DiracAt):
        n, _ = mu.snap(tg)
        return SpatialField(traj.space_grid, mu.mass * traj.values[n])
    if isinstance(mu, Weighted):
        _check_series_grid(mu.varkappa, tg)
        w = _trapezoid(tg) * mu.varkappa.values
        return SpatialField(traj.space_grid, w @ traj.values)
    if isinstance(mu, MixedMeasure):
        out = np.zeros(traj.space_grid.n_nodes)
        for atom in mu.atoms:
            out += apply_measure(traj, atom).values
        if mu.weighted is not None:
            out += apply_measure(traj, mu.weighted).values
        return SpatialField(traj.space_grid, out)
    raise ParameterError(f"unknown measure {mu!r}")


def kappa_weight(varkappa: TimeSeries, beta: float) -> TimeSeries:
    r"""Evaluate

    .. math::

        \kappa(t) = \frac{1}{\Gamma(1 - \beta)} \left[
            (T - t)^{-\beta} \varkappa(T)
            - \int_t^T (s - t)^{-\beta} \varkappa'(s) \,\mathrm{d}s \right].

    :math:`\varkappa'` is a finite difference of the node values and the
    integral is a product-trapezoid rule (exact when :math:`\varkappa'` is
    piecewise linear). :math:`\kappa` is singular at :math:`t = T`; the last
    node holds a linear extrapolation and should not be trusted.
    """
    grid = varkappa.grid
    lead, R = _kappa_parts(varkappa, beta)
    s = grid.T - grid.nodes
    out = np.empty_like(R)
    out[:-1] = lead * s[:-1] ** (-beta) + R[:-1]
    out[-1] = 2.0 * out[-2] - out[-3]
    return TimeSeries(grid, out)


def _kappa_parts(varkappa: TimeSeries, beta: float) -> tuple[float, np.ndarray]:
    """Split kappa into ``lead * (T - t)^(-beta)`` and a bounded remainder."""
    if not 0.0 < beta < 1.0:
        raise ParameterError(f"beta must lie in (0, 1): {beta}")
    Weighted(varkappa)  # validates sign
    grid = varkappa.grid
    if grid.n_steps < 2:
        raise ParameterError("need at least two time steps")
    v = varkappa.values
    dv = np.gradient(v, grid.tau, edge_order=2)
    # the integral is Gamma(1 - beta) * J^{1 - beta}[dv(T - .)](T - t)
    J = frac_integral(TimeSeries(grid, dv[::-1]), 1.0 - beta).values[::-1]
    return float(v[-1]) / math.gamma(1.0 - beta), -J


# }}}


# {{{ problem and report


@dataclass(frozen=True)
class InverseProblemSpec:
    """``problem.reaction`` fixes the reaction family; its ``z`` is ignored."""

    problem: DirectProblem
    measure: Measure
    data: SpatialField
    z_init: SpatialField | None = None
    tol: float = 1.0e-8
    max_iters: int = 50
    #: blend ``z <- (1 - relaxation) z_new + relaxation z_old``
    relaxation: float = 0.0
    #: forward-solver Newton tolerance
    solver_tol: float = 1.0e-11
    #: denominator floor is ``floor_scale * (1 + max|d|)``
    floor_scale: float = 1.0e-10

    def __post_init__(self) -> None:
        if self.data.grid != self.problem.space_grid:
            raise ShapeError("data grid differs from the problem grid")
        if not np.all(np.isfinite(self.data.values)):
            raise ParameterError("data must be finite")
        if self.z_init is not None and self.z_init.grid != self.problem.space_grid:
            raise ShapeError("initial coefficient grid differs from the problem grid")
        if not 0.0 <= self.relaxation < 1.0:
            raise ParameterError(f"relaxation must lie in [0, 1): {self.relaxation}")
        if not (self.tol > 0.0 and self.max_iters >= 1):
            raise ParameterError("need tol > 0 and max_iters >= 1")
        if not self.floor_scale > 0.0:
            raise ParameterError(f"floor scale must be positive: {self.floor_scale}")
        if isinstance(self.measure, Weighted):
            _check_series_grid(self.measure.varkappa, self.problem.time_grid)

    @property
    def floor(self) -> float:
        return self.floor_scale * (1.0 + float(np.max(np.abs(self.data.values))))

    def with_data(self, data: SpatialField | np.ndarray) -> InverseProblemSpec:
        if not isinstance(data, SpatialField):
            data = SpatialField(self.problem.space_grid, data)
        return dataclasses.replace(self, data=data)

    def with_z_init(self, z: SpatialField | np.ndarray) -> InverseProblemSpec:
        if not isinstance(z, SpatialField):
            z = SpatialField(self.problem.space_grid, z)
        return dataclasses.replace(self, z_init=z)

    def forward(self, z: SpatialField | np.ndarray) -> Trajectory:
        if not isinstance(z, SpatialField):
            z = SpatialField(self.problem.space_grid, z)
        problem = self.problem.with_reaction(self.problem.reaction.with_z(z))
        traj, _ = problem.solve(tol=self.solver_tol)
        return traj


@dataclass
class ReconstructionReport:
    method: str
    iterations: int
    converged: bool
    residuals: list[float]
    updates: list[float]
    floor_activations: list[int]
    z: SpatialField
    trajectory: Trajectory
    snap_distance: float = 0.0
    #: iterations after the third at which the residual grew
    monotonicity_violations: list[int] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def contraction_factors(self) -> list[float]:
        u = self.updates
        return [b / a for a, b in zip(u[:-1], u[1:]) if a > 0.0]

    def to_text(self, include_wall_time: bool = True) -> str:
        lines = [
            f"method = {self.method}",
            f"iterations = {self.iterations}",
            f"converged = {str(self.converged).lower()}",
            f"final_residual = {self.residuals[-1]:.6e}",
            f"final_update = {self.updates[-1]:.6e}",
            f"snap_distance = {self.snap_distance:.6e}",
            "monotonicity_violations = "
            + (", ".join(map(str, self.monotonicity_violations)) or "none"),
            "flags = " + (", ".join(self.flags) or "none"),
        ]
        if include_wall_time:
            lines.append(f"wall_time = {self.wall_time:.3f}")
        lines.append("[iterations]")
        lines.append("k, residual, update, floor_activations")
        for k, (r, u, f) in enumerate(zip(self.residuals, self.updates, self.floor_activations)):
            lines.append(f"{k}, {r:.6e}, {u:.6e}, {f}")
        return "\n".join(lines) + "\n"


def _fill_boundary(grid: SpaceGrid, z: np.ndarray) -> np.ndarray:
    """Copy every boundary value from the nearest interior node."""
    z = z.copy()
    bnd = grid.boundary
    idx = grid.multi_index[bnd]
    hi = np.array(grid.n_cells) - 1
    src = np.ravel_multi_index(tuple(np.clip(idx, 1, hi).T), grid.shape)
    z[bnd] = z[src]
    return z


# }}}


# {{{ fixed-point driver


def _iterate(spec: InverseProblemSpec, update, method: str, snap: float = 0.0):
    start = time.perf_counter()
    grid = spec.problem.space_grid
    inner = grid.interior
    d = spec.data.values
    floor = spec.floor

    z = np.zeros(grid.n_nodes) if spec.z_init is None else spec.z_init.values.copy()
    residuals, updates, activations, flags = [], [], [], []
    strikes, converged, traj = 0, False, None

    for _ in range(spec.max_iters):
        traj = spec.forward(z)
        residuals.append(float(np.max(np.abs(apply_measure(traj, spec.measure).values - d)[inner])))

        num, den = update(traj)
        low = ~(den > floor)
        n_low = int(np.count_nonzero(low))
        activations.append(n_low)
        frac = n_low / inner.size
        if n_low == inner.size:
            raise IllPosedError(
                f"denominator below {floor:.3e} at every interior node; "
                "z is not identifiable from these data",
                fraction=1.0,
            )
        if frac > ILL_POSED_FRACTION:
            strikes += 1
            warnings.warn(
                f"denominator floored at {100 * frac:.1f}% of nodes",
                IllPosedWarning,
                stacklevel=3,
            )
            if strikes >= ILL_POSED_PATIENCE:
                raise IllPosedError(
                    f"denominator floored at {100 * frac:.1f}% of nodes for "
                    f"{strikes} consecutive iterations",
                    fraction=frac,
                )
        else:
            strikes = 0

        z_new = np.zeros_like(z)
        z_new[inner] = num / np.maximum(den, floor)
        if spec.relaxation:
            z_new[inner] = (1.0 - spec.relaxation) * z_new[inner] + spec.relaxation * z[inner]
        z_new = _fill_boundary(grid, z_new)

        updates.append(float(np.max(np.abs(z_new - z)[inner])))
        z = z_new
        if updates[-1] < spec.tol and residuals[-1] < spec.tol:
            converged = True
            break

    if not converged:
        flags.append("max_iters reached")
        warnings.warn(f"{method}: no convergence in {spec.max_iters} iterations", stacklevel=3)
    bumps = [k for k in range(4, len(residuals)) if residuals[k] > residuals[k - 1]]
    if bumps:
        flags.append("residual not monotone after iteration 3")

    return ReconstructionReport(
        method=method,
        iterations=len(residuals),
        converged=converged,
        residuals=residuals,
        updates=updates,
        floor_activations=activations,
        z=SpatialField(grid, z),
        trajectory=traj,
        snap_distance=snap,
        monotonicity_violations=bumps,
        flags=flags,
        wall_time=time.perf_counter() - start,
    )


def _source_term(problem: DirectProblem, traj: Trajectory, n: int, which: str) -> np.ndarray:
    r = problem.reaction
    inner = problem.space_grid.interior
    t = float(traj.time_grid.nodes[n])
    w = traj.values[n, inner]
    return r.a(w, t, inner) if which == "a" else r.b(w, t, inner)


def reconstruct_weighted(
    spec: InverseProblemSpec,
    *,
    kappa: Literal["discrete", "continuous"] = "discrete",
) -> tuple[SpatialField, ReconstructionReport]:
    r"""Fixed point for :math:`\mathrm{d}\mu = \varkappa \mathrm{d}t`:

    .. math::

        z \leftarrow \frac{\int \kappa (u - u_0) \,\mathrm{d}t - A d
            - \int b(u) \varkappa \,\mathrm{d}t}{\int a(u) \varkappa \,\mathrm{d}t}.

    With ``kappa="discrete"`` the first integral uses the transpose of the
    solver's own time operator applied to the trapezoid weights, which makes
    the true coefficient an exact fixed point of the discrete map.
    ``kappa="continuous"`` integrates :func:`kappa_weight` directly (singular
    part by product integration, remainder by the trapezoid rule); its fixed
    point differs from the true coefficient by a discretization error.
    """
    mu = spec.measure
    if not isinstance(mu, Weighted):
        raise ParameterError("weighted reconstruction needs a weighted measure")
    problem = spec.problem
    tg, grid = problem.time_grid, problem.space_grid
    inner = grid.interior
    beta = problem.beta
    q = _trapezoid(tg) * mu.varkappa.values

    if kappa == "discrete":
        op = TimeOperator.build(problem.kernel, tg)
        L = op.apply(np.eye(tg.n_steps + 1))
        k_w = L.T @ q
        start = 1
    elif kappa == "continuous":
        # singular part integrated exactly against piecewise-linear u,
        # bounded remainder by the trapezoid rule
        lead, R = _kappa_parts(mu.varkappa, beta)
        rows = frac_integral(TimeSeries(tg, np.eye(tg.n_steps + 1)), 1.0 - beta).values[-1]
        k_w = lead * math.gamma(1.0 - beta) * rows + _trapezoid(tg) * R
        start = 0
    else:
        raise ParameterError(f"unknown kappa mode {kappa!r}")

    A_d = apply_operator(problem.op, spec.data).values[inner]
    if start:
        # the solver's equation holds from level 1 on; restore level 0 of A d
        A_d = A_d - q[0] * apply_operator(problem.op, problem.u0).values[inner]

    def update(traj: Trajectory):
        U = traj.values[:, inner]
        num = k_w @ (U - U[0]) - A_d
        den = np.zeros(inner.size)
        for n in range(start, tg.n_steps + 1):
            if q[n] == 0.0:
                continue
            num -= q[n] * _source_term(problem, traj, n, "b")
            den += q[n] * _source_term(problem, traj, n, "a")
        return num, den

    report = _iterate(spec, update, f"weighted-{kappa}")
    return report.z, report


def reconstruct_final_time(
    spec: InverseProblemSpec,
    *,
    pin: bool = False,
) -> tuple[SpatialField, ReconstructionReport]:
    r"""Fixed point for a point mass at :math:`t^*`:

    .. math::

        z \leftarrow \frac{D_h (u - u_0)(t^*) - A d - b(d, t^*)}{a(d, t^*)}.

    By default :math:`D_h u(t^*)` is taken from the current forward solve.
    With ``pin=True`` the slice at :math:`t^*` is replaced by the data before
    differencing; this variant amplifies history errors by the leading
    memory coefficient and is kept for comparison only.
    """
    mu = spec.measure
    if not isinstance(mu, DiracAt):
        raise ParameterError("final-time reconstruction needs a point mass")
    problem = spec.problem
    tg, grid = problem.time_grid, problem.space_grid
    inner = grid.interior
    n_star, snap = mu.snap(tg)
    if n_star == 0:
        raise ParameterError("t* snaps to t = 0, where the data carry no information")
    t_star = float(tg.nodes[n_star])

    d = spec.data.values / mu.mass
    op = TimeOperator.build(problem.kernel, tg)
    row = op.apply(np.eye(tg.n_steps + 1))[n_star]
    A_d = apply_operator(problem.op, SpatialField(grid, d)).values[inner]
    r = problem.reaction
    a_d = r.a(d[inner], t_star, inner)
    b_d = r.b(d[inner], t_star, inner)

    def update(traj: Trajectory):
        U = traj.values[:, inner]
        if pin:
            U = U.copy()
            U[n_star] = d[inner]
        Dh = row @ U
        return Dh - A_d - b_d, a_d

    report = _iterate(spec, update, "final-time-pinned" if pin else "final-time", snap)
    return report.z, report


def reconstruct(spec: InverseProblemSpec, **kwargs) -> tuple[SpatialField, ReconstructionReport]:
    """Dispatch on the measure type."""
    if isinstance(spec.measure, Weighted):
        return reconstruct_weighted(spec, **kwargs)
    if isinstance(spec.measure, DiracAt):
        return reconstruct_final_time(spec, **kwargs)
    raise ParameterError("reconstruction supports a single point mass or a weighted measure only")


# }}}


# {{{ diagnostics


def split_positive_negative(z: SpatialField) -> tuple[SpatialField, SpatialField]:
    r""":math:`z^\pm = (|z| \pm z) / 2`."""
    a = np.abs(z.values)
    return SpatialField(z.grid, (a + z.values) / 2.0), SpatialField(z.grid, (a - z.values) / 2.0)


@dataclass
class UniquenessReport:
    data_difference: float
    z_difference: float
    theorem: str
    theorem_applies: bool
    annotation: str
    audits: list = field(default_factory=list)

    def to_text(self) -> str:
        lines = [
            f"data_difference = {self.data_difference:.6e}",
            f"z_difference = {self.z_difference:.6e}",
            f"theorem = {self.theorem}",
            f"theorem_applies = {str(self.theorem_applies).lower()}",
            f"annotation = {self.annotation}",
        ]
        return "\n".join(lines) + "\n"


def uniqueness_experiment(
    spec: InverseProblemSpec,
    z_a: SpatialField,
    z_b: SpatialField,
    *,
    tol: float = 1.0e-8,
) -> UniquenessReport:
    """Compare the data generated by two coefficients and audit whether the
    uniqueness hypotheses cover the pair."""
    from fracinv.conditions import audit_general, audit_weighted

    inner = spec.problem.space_grid.interior
    ua, ub = spec.forward(z_a), spec.forward(z_b)
    da = apply_measure(ua, spec.measure).values
    db = apply_measure(ub, spec.measure).values
    data_diff = float(np.max(np.abs(da - db)[inner]))
    z_diff = float(np.max(np.abs(z_a.values - z_b.values)[inner]))

    r = spec.problem.reaction
    beta = spec.problem.beta
    if isinstance(spec.measure, Weighted):
        theorem = "weighted"
        audits = [
            audit_weighted((ua, ub), r, z_b, beta, spec.measure.varkappa, tol=tol),
            audit_weighted((ub, ua), r, z_a, beta, spec.measure.varkappa, tol=tol),
        ]
    else:
        theorem = "general"
        audits = [
            audit_general((ua, ub), r, z_b, beta, tol=tol),
            audit_general((ub, ua), r, z_a, beta, tol=tol),
        ]
    applies = all(a.passed for a in audits)

    if not applies:
        note = "theorem not applicable"
    elif z_diff == 0.0:
        note = "identical coefficients"
    elif data_diff > tol:
        note = "distinct coefficients give distinct data"
    else:
        note = f"data differ by at most {data_diff:.3e}, below tolerance {tol:.1e}"
    return UniquenessReport(data_diff, z_diff, theorem, applies, note, audits)


@dataclass(frozen=True)
class NoiseStudy:
    level: float
    clean_error: float
    noisy_error: float
    clean: ReconstructionReport
    noisy: ReconstructionReport


def noise_study(
    spec: InverseProblemSpec,
    z_true: SpatialField,
    *,
    level: float = 0.01,
    seed: int = 0,
    **kwargs,
) -> NoiseStudy:
    """Relative reconstruction error on clean twin data and on data with
    multiplicative noise ``1 + level * N(0, 1)``."""
    rng = np.random.default_rng(seed)
    inner = spec.problem.space_grid.interior
    d = apply_measure(spec.forward(z_true), spec.measure).values
    noisy = d * (1.0 + level * rng.standard_normal(d.shape))
    scale = max(float(np.max(np.abs(z_true.values[inner]))), 1.0e-300)

    def err(rep: ReconstructionReport) -> float:
        return float(np.max(np.abs(rep.z.values - z_true.values)[inner])) / scale

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        _, clean = reconstruct(spec.with_data(d), **kwargs)
        _, dirty = reconstruct(spec.with_data(noisy), **kwargs)
    return NoiseStudy(level, err(clean), err(dirty), clean, dirty)


# }}}
