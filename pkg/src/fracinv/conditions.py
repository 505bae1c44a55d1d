r"""Audits of the hypotheses behind the uniqueness results.

Every entry of a :class:`ConditionReport` carries a signed margin (positive
means satisfied with room to spare) and the lattice point where the margin
is attained. Lattices are fixed: 201 values of :math:`w` on
:math:`[\hat m, \tilde m]`, every time node after :math:`t = 0` and every
interior space node, so reports are deterministic.

Hypothesis ids:

=======================  ==================================================
``cone_ww``              :math:`a_{ww} z + b_{ww} \ge 0`
``cone_wt``              :math:`a_{wt} z + b_{wt} \ge 0`
``ut_nonnegative``       :math:`u_t \ge 0` (only if :math:`a_{ww}` or
                         :math:`b_{ww}` is non-zero)
``a_initial_zero``       :math:`a(u_0, 0, x) = 0`
``a_nonnegative``        :math:`a(u^1, t, x) \ge 0`
``a_early_positive``     :math:`a(u^1, t, x) > 0` on :math:`(0, \varepsilon_x)`
``slope_below_theta``    :math:`a_w z + b_w \le \Theta`
``slope_below_theta_hat``  :math:`\sup (a_w z + b_w) < \hat\theta`
=======================  ==================================================
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from fracinv.domain import BoundaryCondition, EllipticOperator, SpatialField, apply_operator
from fracinv.errors import HypothesisViolation, ParameterError
from fracinv.forward import Trajectory, time_derivative
from fracinv.fracops import TimeSeries, caputo_l1
from fracinv.inverse import kappa_weight
from fracinv.reactions import LATTICE_POINTS, Reaction

__all__ = [
    "ClosedFormReport",
    "CONDITION_SETS",
    "ConditionReport",
    "Entry",
    "audit_general",
    "audit_monotone",
    "audit_theorem3",
    "audit_theorem4",
    "audit_theorem5",
    "audit_weighted",
    "closed_form_conditions",
    "compute_theta",
    "compute_theta_hat",
    "section6_closed_forms",
    "theta_zero",
]

PASS, FAIL, NA, NOT_COVERED = "pass", "fail", "n/a", "not covered"

#: labels of the two uniqueness condition sets, keyed by the interface's ``theorem`` argument
CONDITION_SETS = {3: "general", 4: "weighted"}


def theta_zero(beta: float, T: float) -> float:
    r""":math:`T^{-\beta} / \Gamma(1 - \beta)`."""
    return T ** (-beta) / math.gamma(1.0 - beta)


@dataclass(frozen=True)
class Entry:
    id: str
    status: str
    margin: float
    #: ``(w, t, node)``; unused slots are nan / -1
    witness: tuple[float, float, int] = (math.nan, math.nan, -1)
    kind: str = "hypothesis"
    note: str = ""

    @property
    def ok(self) -> bool:
        return self.status in (PASS, NA)


def _entry(id: str, margin: float, witness, tol: float, kind: str = "hypothesis", note: str = "") -> Entry:
    status = PASS if margin >= -tol else FAIL
    return Entry(id, status, float(margin), witness, kind, note)


@dataclass
class ConditionReport:
    theorem: str
    theta: float
    theta_hat: float
    m_hat: float
    m_tilde: float
    epsilon_min: float
    entries: list[Entry] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.ok for e in self.entries if e.kind == "hypothesis")

    def __getitem__(self, id: str) -> Entry:
        for e in self.entries:
            if e.id == id:
                return e
        raise KeyError(id)

    def to_text(self) -> str:
        def num(v: float) -> str:
            return "undefined" if v == -math.inf else f"{v:.6e}"

        lines = [
            f"theorem = {self.theorem}",
            f"theta = {num(self.theta)}",
            f"theta_hat = {num(self.theta_hat)}",
            f"m_hat = {self.m_hat:.6e}",
            f"m_tilde = {self.m_tilde:.6e}",
            f"epsilon_min = {self.epsilon_min:.6e}",
            f"passed = {str(self.passed).lower()}",
            "[entries]",
        ]
        for e in self.entries:
            w, t, x = e.witness
            lines.append(
                f"{e.kind} {e.id}: {e.status} margin={num(e.margin)} "
                f"witness=(w={w:.6g}, t={t:.6g}, node={x})" + (f" {e.note}" if e.note else "")
            )
        lines += [f"note: {n}" for n in self.notes]
        return "\n".join(lines) + "\n"

    def csv_rows(self) -> list[tuple]:
        return [(e.id, e.kind, e.status, e.margin, *e.witness) for e in self.entries]


# {{{ theta and theta-hat


def compute_theta(
    a_traj: Trajectory,
    beta: float,
    floor: float | None = None,
    *,
    nodes: np.ndarray | None = None,
) -> float:
    r"""Discrete :math:`\Theta = \inf D_t^\beta a / a` over nodes with
    :math:`a > \text{floor}`, using the plain L1 derivative.

    Returns ``-inf`` when no node has :math:`a` above the floor and ``0``
    when :math:`D_t^\beta a < 0` somewhere :math:`a` is at or below it.
    """
    A = a_traj.values if nodes is None else a_traj.values[:, nodes]
    scale = float(np.max(np.abs(A)))
    if scale == 0.0:
        return -math.inf
    if floor is None:
        floor = 1.0e-12 * scale
    start_gap = float(np.max(np.abs(A[0])))
    if start_gap > 1.0e-8 * max(1.0, scale):
        raise HypothesisViolation(
            f"a(u0, 0, x) must vanish, found |a| = {start_gap:.3e}",
            where=f"node {int(np.argmax(np.abs(A[0])))}",
        )
    D = caputo_l1(TimeSeries(a_traj.time_grid, A), beta).values[1:]
    A = A[1:]
    big = A > floor
    if not np.any(big):
        return -math.inf
    if np.any(D[~big] < -1.0e-12 * float(np.max(np.abs(D)))):
        return 0.0
    return float(np.min(D[big] / A[big]))


def compute_theta_hat(varkappa: TimeSeries, beta: float) -> float:
    r""":math:`\hat\theta = \inf \kappa / \varkappa` over nodes with
    :math:`\varkappa > 0`, the singular last node excluded."""
    kappa = kappa_weight(varkappa, beta).values[:-1]
    v = varkappa.values[:-1]
    pos = v > 0.0
    if not np.any(pos):
        raise HypothesisViolation("weight vanishes on every node before T")
    return float(np.min(kappa[pos] / v[pos]))


# }}}


# {{{ audits


def _runs(run) -> tuple[Trajectory, ...]:
    if isinstance(run, Trajectory):
        return (run,)
    runs = tuple(run)
    if not runs:
        raise ParameterError("need at least one trajectory")
    return runs


def _z(z, r: Reaction) -> np.ndarray:
    if z is None:
        return r.z.values
    if isinstance(z, SpatialField):
        return z.values
    return np.broadcast_to(np.asarray(z, dtype=np.float64), (r.grid.n_nodes,))


def _lattice_extreme(fn, w: np.ndarray, traj: Trajectory, nodes: np.ndarray, sign: float):
    """Minimum of ``sign * fn(w, t, nodes)`` over the lattice and its witness."""
    best, wit = math.inf, (math.nan, math.nan, -1)
    for t in traj.time_grid.nodes[1:]:
        vals = sign * fn(w[:, None], float(t), nodes)
        k = int(np.argmin(vals))
        if vals.flat[k] < best:
            i, j = np.unravel_index(k, vals.shape)
            best, wit = float(vals[i, j]), (float(w[i]), float(t), int(nodes[j]))
    return best, wit


def _combo(r: Reaction, z: np.ndarray, ia: int, ib: int):
    """``a_parts[ia] * z + b_parts[ib]`` as a lattice function."""

    def fn(w, t, nodes):
        return r.a_parts(w, t, nodes)[ia] * z[nodes] + r.b_parts(w, t, nodes)[ib]

    return fn


def _trajectory_a(r: Reaction, traj: Trajectory, which: int = 0) -> Trajectory:
    nodes = np.arange(traj.space_grid.n_nodes)
    vals = np.stack(
        [r.a_parts(traj.values[n], float(t), nodes)[which] for n, t in enumerate(traj.time_grid.nodes)]
    )
    return Trajectory(traj.time_grid, traj.space_grid, vals)


def _common_entries(runs, r: Reaction, beta: float, tol: float):
    """Entries shared by both uniqueness audits, plus Theta and epsilon."""
    u1 = runs[0]
    grid, tg = u1.space_grid, u1.time_grid
    inner = grid.interior
    a1 = _trajectory_a(r, u1).values
    entries = []

    a0 = a1[0, inner]
    k = int(np.argmax(np.abs(a0)))
    entries.append(_entry("a_initial_zero", 0.0 - abs(float(a0[k])), (float(u1.values[0, inner[k]]), 0.0, int(inner[k])), tol))

    body = a1[1:, inner]
    n, j = np.unravel_index(int(np.argmin(body)), body.shape)
    entries.append(
        _entry("a_nonnegative", float(body[n, j]), (float(u1.values[n + 1, inner[j]]), float(tg.nodes[n + 1]), int(inner[j])), tol)
    )

    # epsilon_x: end of the leading run of strictly positive a
    pos = body > 0.0
    first_bad = np.where(pos.all(axis=0), tg.n_steps, np.argmin(pos, axis=0))
    eps = tg.nodes[first_bad]
    j = int(np.argmin(eps))
    e_min = float(eps[j])
    entries.append(
        Entry(
            "a_early_positive",
            PASS if e_min > 0.0 else FAIL,
            e_min,
            (math.nan, float(tg.nodes[min(first_bad[j] + 1, tg.n_steps)]), int(inner[j])),
        )
    )

    try:
        theta = compute_theta(Trajectory(tg, grid, a1), beta, nodes=inner)
    except HypothesisViolation:
        theta = -math.inf
    return entries, theta, e_min


def _bounds(runs) -> tuple[float, float]:
    return (
        min(float(u.values.min()) for u in runs),
        max(float(u.values.max()) for u in runs),
    )


def audit_general(
    run: Trajectory | Sequence[Trajectory],
    r: Reaction,
    z_candidate: SpatialField | np.ndarray | float | None,
    beta: float,
    *,
    tol: float = 1.0e-8,
) -> ConditionReport:
    r"""Audit the general-measure uniqueness hypotheses.

    ``run`` is :math:`u^1` or the pair :math:`(u^1, u^2)`; the lattice for
    :math:`w` spans both. ``z_candidate`` plays the role of :math:`z^2` in
    the cone conditions (default: the reaction's own ``z``).
    """
    runs = _runs(run)
    z = _z(z_candidate, r)
    inner = runs[0].space_grid.interior
    m_hat, m_tilde = _bounds(runs)
    w = np.linspace(m_hat, m_tilde, LATTICE_POINTS)

    entries = []
    v_ww, wit_ww = _lattice_extreme(_combo(r, z, 3, 3), w, runs[0], inner, 1.0)
    entries.append(_entry("cone_ww", v_ww, wit_ww, tol))
    v_wt, wit_wt = _lattice_extreme(_combo(r, z, 4, 4), w, runs[0], inner, 1.0)
    entries.append(_entry("cone_wt", v_wt, wit_wt, tol))

    curved = False
    for t in runs[0].time_grid.nodes[1:]:
        a_ww = r.a_parts(w[:, None], float(t), inner)[3]
        b_ww = r.b_parts(w[:, None], float(t), inner)[3]
        if np.any(a_ww != 0.0) or np.any(b_ww != 0.0):
            curved = True
            break
    if curved:
        lo, wit = math.inf, (math.nan, math.nan, -1)
        for u in runs:
            ut = time_derivative(u).values[:, inner]
            n, j = np.unravel_index(int(np.argmin(ut)), ut.shape)
            if ut[n, j] < lo:
                lo, wit = float(ut[n, j]), (float(u.values[n, inner[j]]), float(u.time_grid.nodes[n]), int(inner[j]))
        scale = max(1.0, max(float(np.max(np.abs(time_derivative(u).values))) for u in runs))
        entries.append(_entry("ut_nonnegative", lo, wit, tol * scale))
    else:
        entries.append(Entry("ut_nonnegative", NA, math.nan, note="a_ww and b_ww vanish"))

    common, theta, e_min = _common_entries(runs, r, beta, tol)
    entries += common

    top, wit = _lattice_extreme(_combo(r, z, 1, 1), w, runs[0], inner, -1.0)
    entries.append(_entry("slope_below_theta", theta + top, wit, tol))

    return ConditionReport("general", theta, math.nan, m_hat, m_tilde, e_min, entries)


def audit_weighted(
    run: Trajectory | Sequence[Trajectory],
    r: Reaction,
    z_candidate: SpatialField | np.ndarray | float | None,
    beta: float,
    varkappa: TimeSeries,
    *,
    tol: float = 1.0e-8,
) -> ConditionReport:
    r"""Audit the weighted-measure uniqueness hypotheses: the cone
    conditions are replaced by :math:`\sup (a_w z + b_w) < \hat\theta`."""
    runs = _runs(run)
    z = _z(z_candidate, r)
    inner = runs[0].space_grid.interior
    m_hat, m_tilde = _bounds(runs)
    w = np.linspace(m_hat, m_tilde, LATTICE_POINTS)

    entries, theta, e_min = _common_entries(runs, r, beta, tol)
    theta_hat = compute_theta_hat(varkappa, beta)
    top, wit = _lattice_extreme(_combo(r, z, 1, 1), w, runs[0], inner, -1.0)
    entries.append(_entry("slope_below_theta_hat", theta_hat + top, wit, tol))

    report = ConditionReport("weighted", theta, theta_hat, m_hat, m_tilde, e_min, entries)
    report.notes.append("theta is informational here; any value below theta_hat may serve")
    return report


def audit_monotone(
    run: Trajectory,
    r: Reaction,
    z: SpatialField | np.ndarray | float | None,
    beta: float,
    *,
    op: EllipticOperator,
    bc: BoundaryCondition,
    tol: float = 1.0e-8,
) -> ConditionReport:
    r"""Check the sufficient conditions for :math:`u_t \ge 0` and for
    :math:`\Theta \ge T^{-\beta} / \Gamma(1 - \beta)`, then the two
    conclusions themselves. Conclusions whose hypotheses fail are reported
    as not covered."""
    u = run
    zz = _z(z, r)
    grid, tg = u.space_grid, u.time_grid
    inner = grid.interior
    t = tg.nodes
    entries = []

    # a_t z + b_t >= 0 along the solution
    lo, wit = math.inf, (math.nan, math.nan, -1)
    for n in range(tg.n_steps + 1):
        w = u.values[n, inner]
        v = r.a_parts(w, float(t[n]), inner)[2] * zz[inner] + r.b_parts(w, float(t[n]), inner)[2]
        j = int(np.argmin(v))
        if v[j] < lo:
            lo, wit = float(v[j]), (float(w[j]), float(t[n]), int(inner[j]))
    entries.append(_entry("source_increasing", lo, wit, tol))

    gt = np.diff(bc.g, axis=0) / tg.tau
    if gt.size:
        n, b = np.unravel_index(int(np.argmin(gt)), gt.shape)
        entries.append(_entry("boundary_increasing", float(gt[n, b]), (math.nan, float(t[n + 1]), int(grid.boundary[b])), tol))

    u0 = u.values[0]
    a0 = r.a_parts(u0[inner], 0.0, inner)[0]
    k = int(np.argmax(np.abs(a0)))
    entries.append(_entry("a_initial_zero", 0.0 - abs(float(a0[k])), (float(u0[inner[k]]), 0.0, int(inner[k])), tol))
    rest = apply_operator(op, SpatialField(grid, u0)).values[inner] + r.b_parts(u0[inner], 0.0, inner)[0]
    k = int(np.argmax(np.abs(rest)))
    entries.append(_entry("initial_equilibrium", 0.0 - abs(float(rest[k])), (float(u0[inner[k]]), 0.0, int(inner[k])), tol))

    first_fail = next((e.id for e in entries if not e.ok), None)

    ut = time_derivative(u).values[:, inner]
    n, j = np.unravel_index(int(np.argmin(ut)), ut.shape)
    if first_fail is None:
        entries.append(_entry("ut_nonnegative", float(ut[n, j]), (float(u.values[n, inner[j]]), float(t[n]), int(inner[j])), tol, kind="conclusion"))
    else:
        entries.append(Entry("ut_nonnegative", NOT_COVERED, float(ut[n, j]), kind="conclusion", note=f"first failed hypothesis: {first_fail}"))

    # a, a_w, a_t >= 0 along the solution
    mono = math.inf
    mwit = (math.nan, math.nan, -1)
    for n in range(1, tg.n_steps + 1):
        w = u.values[n, inner]
        parts = r.a_parts(w, float(t[n]), inner)
        v = np.minimum(np.minimum(parts[0], parts[1]), parts[2])
        j = int(np.argmin(v))
        if v[j] < mono:
            mono, mwit = float(v[j]), (float(w[j]), float(t[n]), int(inner[j]))
    entries.append(_entry("a_monotone", mono, mwit, tol))
    if not entries[-1].ok and first_fail is None:
        first_fail = "a_monotone"

    theta = compute_theta(_trajectory_a(r, u), beta, nodes=inner)
    bound = theta_zero(beta, tg.T)
    if first_fail is None:
        entries.append(_entry("theta_lower_bound", theta - bound, (math.nan, math.nan, -1), tol, kind="conclusion"))
    else:
        entries.append(Entry("theta_lower_bound", NOT_COVERED, theta - bound, kind="conclusion", note=f"first failed hypothesis: {first_fail}"))

    m_hat, m_tilde = _bounds((u,))
    report = ConditionReport("monotonicity", theta, math.nan, m_hat, m_tilde, math.nan, entries)
    if first_fail:
        report.notes.append(f"first failed hypothesis: {first_fail}")
    return report


# }}}


# {{{ closed forms for the named reactions


@dataclass
class ClosedFormReport:
    case: int
    theorem: int
    entries: list[Entry]
    #: None without a general audit; otherwise whether pass implies pass
    implication_holds: bool | None = None

    @property
    def passed(self) -> bool:
        return all(e.ok for e in self.entries)

    def to_text(self) -> str:
        lines = [
            f"case = {self.case}",
            f"conditions = {CONDITION_SETS[self.theorem]}",
            f"passed = {str(self.passed).lower()}",
        ]
        lines += [f"{e.id}: {e.status} margin={e.margin:.6e}" for e in self.entries]
        if self.implication_holds is not None:
            lines.append(f"implication_holds = {str(self.implication_holds).lower()}")
        return "\n".join(lines) + "\n"


def closed_form_conditions(
    case: int,
    beta: float,
    T: float,
    W: float,
    z_field: SpatialField | np.ndarray | float,
    u_bound: float,
    theorem: int,
    *,
    audit: ConditionReport | None = None,
) -> ClosedFormReport:
    r"""Sufficient conditions for the linear (1), Fisher (2) and Zeldovich
    (3) reactions with :math:`u_0 = 0`, :math:`g \ge 0` and a source
    vanishing at :math:`t = 0`; ``theorem`` 4 assumes :math:`\varkappa = 1`.

    With ``audit`` (the general audit on the same run) the implication
    "closed form passes, so the audit passes" is checked.
    """
    if case not in (1, 2, 3) or theorem not in (3, 4):
        raise ParameterError(f"unknown case/theorem pair ({case}, {theorem})")
    if not W > 0.0:
        raise ParameterError(f"W must be positive: {W}")
    z = np.asarray(z_field.values if isinstance(z_field, SpatialField) else z_field, dtype=np.float64)
    z_max = float(np.max(z))
    th0 = theta_zero(beta, T)

    if case == 1:
        z_lim, u_lim = th0, None
    elif case == 2:
        z_lim, u_lim = (th0, W / 2.0) if theorem == 4 else (0.0, W / 2.0)
    else:
        z_lim, u_lim = 3.0 * th0 / W, (2.0 * W / 3.0 if theorem == 4 else W / 3.0)

    entries = [Entry("z_bound", PASS if z_max <= z_lim else FAIL, z_lim - z_max)]
    if u_lim is not None:
        entries.append(Entry("u_bound", PASS if u_bound <= u_lim else FAIL, u_lim - u_bound))

    out = ClosedFormReport(case, theorem, entries)
    if audit is not None:
        out.implication_holds = (not out.passed) or audit.passed
    return out


# }}}


# names fixed by the public interface
audit_theorem3 = audit_general
audit_theorem4 = audit_weighted
audit_theorem5 = audit_monotone
section6_closed_forms = closed_form_conditions
