from __future__ import annotations

import math

import numpy as np
import pytest

from fracinv.domain import BoundaryCondition, EllipticOperator, SpaceGrid, SpatialField
from fracinv.errors import ParameterError, SolverError
from fracinv.forward import DirectProblem, Trajectory
from fracinv.fracops import FractionalPowerKernel, TabulatedKernel, TimeGrid, shift_coefficient
from fracinv.positivity import (
    CAVEAT,
    audit_positivity,
    find_sigma,
    minimum_principle_diagnostic,
    shift_transform,
    strict_positivity_probe,
    unshift,
)
from fracinv.reactions import Fisher, FunctionSource, LinearPotential, SourceOnly, Zeldovich

from conftest import fisher_problem


def run(reaction_cls, z, *, case="dirichlet", g=0.0, u0=lambda x: np.sin(np.pi * x), beta=0.5, **kw):
    sg = SpaceGrid.interval(1.0, 24)
    tg = TimeGrid(1.0, 48)
    bc = BoundaryCondition(sg, tg, case, g)
    r = reaction_cls(SpatialField.constant(sg, z), **kw)
    p = DirectProblem(
        EllipticOperator.laplacian(sg), bc, r, SpatialField.from_function(sg, u0), FractionalPowerKernel(beta)
    )
    traj, _ = p.solve()
    return traj, p


@pytest.mark.parametrize(
    "cls, z, kw",
    [
        (LinearPotential, -3.0, {}),
        (LinearPotential, 2.0, {}),
        (Fisher, 1.0, {}),
        (Zeldovich, -1.0, {"W": 2.0}),
    ],
)
@pytest.mark.parametrize("case", ["dirichlet", "oblique"])
def test_nonnegative_data_gives_nonnegative_solution(cls, z, kw, case):
    traj, p = run(cls, z, case=case, **kw)
    rep = audit_positivity(traj, p.reaction, p.kernel, p.bc)
    assert rep.hypotheses_hold
    assert rep.min_u >= -1e-8
    assert rep.assertion_i == "pass" and rep.assertion_ii == "pass"
    assert rep.caveat == CAVEAT


def test_negative_initial_data_is_out_of_scope():
    traj, p = run(LinearPotential, 0.0, u0=lambda x: np.sin(2 * np.pi * x))
    rep = audit_positivity(traj, p.reaction, p.kernel, p.bc)
    (h,) = [h for h in rep.hypotheses if h.id == "initial_nonnegative"]
    assert not h.passed and h.value < 0
    assert rep.assertion_i == "not covered by theorem"


def test_negative_source_breaks_slope_hypothesis():
    sg = SpaceGrid.interval(1.0, 8)
    tg = TimeGrid(1.0, 8)
    r = SourceOnly(SpatialField.constant(sg, 0.0), source=FunctionSource(lambda t, x: -1.0 + 0 * x))
    p = DirectProblem(
        EllipticOperator.laplacian(sg), BoundaryCondition.dirichlet(sg, tg), r,
        SpatialField.constant(sg, 0.0), FractionalPowerKernel(0.5),
    )
    traj, _ = p.solve()
    rep = audit_positivity(traj, r, p.kernel, p.bc)
    assert not rep.hypotheses_hold
    assert rep.min_u < 0
    assert rep.assertion_i == "not covered by theorem"


def test_zero_propagation_violation_is_located():
    sg = SpaceGrid.interval(1.0, 4)
    tg = TimeGrid(1.0, 4)
    U = np.zeros((5, 5))
    U[1:3, 2] = 1.0  # positive, then back to zero
    traj = Trajectory(tg, sg, U)
    r = LinearPotential(SpatialField.constant(sg, 0.0))
    rep = audit_positivity(traj, r, FractionalPowerKernel(0.5), BoundaryCondition.dirichlet(sg, tg))
    assert rep.assertion_ii == "fail"
    assert rep.assertion_ii_violations == [(3, 2), (4, 2)]
    assert [row[:3] for row in rep.witness_rows()] == [("zero_propagation", 3, 2), ("zero_propagation", 4, 2)]


def test_rising_kernel_is_reported():
    traj, p = run(LinearPotential, 0.0)
    k = TabulatedKernel(np.linspace(1.0, 2.0, traj.time_grid.n_steps))
    rep = audit_positivity(traj, p.reaction, k, p.bc)
    assert not rep.hypotheses[0].passed


def test_strict_positivity_probe_flags_zero_nodes():
    sg = SpaceGrid.interval(1.0, 4)
    tg = TimeGrid(1.0, 2)
    traj = Trajectory(tg, sg, np.zeros((3, 5)))
    r = SourceOnly(SpatialField.constant(sg, 0.0), source=1.0)
    hits = strict_positivity_probe(traj, r)
    assert {(n, i) for n, i, _, _ in hits} == {(n, i) for n in (1, 2) for i in (1, 2, 3)}


def test_report_text_mentions_each_hypothesis():
    traj, p = run(Fisher, 0.5)
    text = audit_positivity(traj, p.reaction, p.kernel, p.bc).to_text()
    for key in ("kernel_positive_nonincreasing", "slope_bound_near_zero", "initial_nonnegative",
                "boundary_data_nonnegative", "nonnegativity: pass", "zero_propagation: pass", "caveat"):
        assert key in text


# {{{ exponential shift


def test_shift_round_trip():
    traj, p = run(Fisher, 1.0)
    sh = shift_transform(traj, p.reaction, p.kernel, 2.5, bc=p.bc)
    back = unshift(sh)
    np.testing.assert_allclose(back.values, traj.values, rtol=1e-13, atol=1e-15)
    np.testing.assert_allclose(sh.g, 0.0)


def test_shifted_reaction_is_nonnegative_for_found_rate():
    traj, p = run(LinearPotential, -3.0)
    Q = float(np.abs(traj.values).max())
    sigma, margin = find_sigma(p.reaction, p.kernel, Q, 0.1, 3.0, p.time_grid)
    assert margin >= 0.0
    assert shift_coefficient(p.kernel, sigma, p.time_grid) >= 3.0 + 3.0 * Q / 0.1 - 1e-9
    sh = shift_transform(traj, p.reaction, p.kernel, sigma, bc=p.bc, Q=Q)
    assert sh.nonnegative_on_lattice


def test_find_sigma_is_minimal():
    traj, p = run(LinearPotential, -1.0)
    sigma, _ = find_sigma(p.reaction, p.kernel, 1.0, 0.5, 1.0, p.time_grid)
    assert shift_coefficient(p.kernel, 0.99 * sigma, p.time_grid) < 1.0 + 1.0 / 0.5


def test_find_sigma_gives_up_beyond_cap():
    traj, p = run(LinearPotential, -1.0)
    with pytest.raises(SolverError):
        find_sigma(p.reaction, p.kernel, 1.0, 1e-9, 0.0, p.time_grid, sigma_max=10.0)


def test_unshift_refuses_underflowed_trajectory():
    traj, p = run(LinearPotential, -1.0)
    sh = shift_transform(traj, p.reaction, p.kernel, 1000.0)
    with pytest.raises(ParameterError):
        unshift(sh)


@pytest.mark.parametrize("sigma", [-1.0, math.inf, math.nan])
def test_shift_rejects_bad_rate(sigma):
    traj, p = run(LinearPotential, -1.0)
    with pytest.raises(ParameterError):
        shift_transform(traj, p.reaction, p.kernel, sigma)


# }}}


def test_minimum_principle_on_solver_output():
    traj, _ = fisher_problem(n_steps=16, n_cells=16).solve()
    assert minimum_principle_diagnostic(traj).passed


def test_minimum_principle_flags_interior_dip():
    sg = SpaceGrid.interval(1.0, 4)
    tg = TimeGrid(1.0, 1)
    U = np.array([[0.0, 0, 0, 0, 0], [0.0, 0, -1, 0, 0]])
    d = minimum_principle_diagnostic(Trajectory(tg, sg, U))
    assert not d.passed and d.location == (1, 2)
