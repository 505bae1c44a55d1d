from __future__ import annotations

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fracinv.conditions import theta_zero
from fracinv.domain import BoundaryCondition, EllipticOperator, SpaceGrid, SpatialField
from fracinv.errors import HypothesisViolation, IllPosedError, ParameterError, ShapeError
from fracinv.forward import DirectProblem, Trajectory
from fracinv.fracops import FractionalPowerKernel, TimeGrid, TimeSeries
from fracinv.inverse import (
    DiracAt,
    IllPosedWarning,
    InverseProblemSpec,
    MixedMeasure,
    Weighted,
    apply_measure,
    kappa_weight,
    noise_study,
    reconstruct,
    reconstruct_final_time,
    reconstruct_weighted,
    split_positive_negative,
    uniqueness_experiment,
)
from fracinv.reactions import Fisher, FunctionSource, SourceOnly

from conftest import sine_source

SG = SpaceGrid.interval(1.0, 32)
TG = TimeGrid(1.0, 64)
Z_TRUE = SpatialField.from_function(SG, lambda x: 0.3 + 0.2 * np.sin(np.pi * x))


def problem(reaction=None, tg=TG):
    r = reaction if reaction is not None else Fisher(Z_TRUE, W=1.0, source=sine_source())
    return DirectProblem(
        EllipticOperator.laplacian(SG),
        BoundaryCondition.dirichlet(SG, tg, 0.0),
        r,
        SpatialField.constant(SG, 0.0),
        FractionalPowerKernel(0.5),
    )


def twin_spec(measure):
    p = problem()
    traj, _ = p.solve(tol=1e-11)
    return InverseProblemSpec(p, measure, apply_measure(traj, measure))


def rel_err(z):
    inner = SG.interior
    return float(np.max(np.abs(z.values - Z_TRUE.values)[inner]) / np.max(np.abs(Z_TRUE.values)))


# {{{ measures and weights


@pytest.mark.parametrize("beta", [0.3, 0.5, 0.8])
@pytest.mark.parametrize("T", [1.0, 2.5])
def test_kappa_of_unit_weight_closed_form(beta, T):
    tg = TimeGrid(T, 50)
    k = kappa_weight(TimeSeries(tg, np.ones(51)), beta).values
    s = T - tg.nodes[:-1]
    np.testing.assert_allclose(k[:-1], s ** (-beta) / math.gamma(1 - beta), rtol=1e-10)


def test_kappa_is_linear_in_weight():
    beta = 0.4
    a = TimeSeries(TG, 1 + TG.nodes)
    b = TimeSeries(TG, np.exp(-TG.nodes))
    ab = TimeSeries(TG, 2 * a.values + 3 * b.values)
    np.testing.assert_allclose(
        kappa_weight(ab, beta).values,
        2 * kappa_weight(a, beta).values + 3 * kappa_weight(b, beta).values,
        rtol=1e-12,
    )


def test_kappa_of_linear_weight_against_quadrature():
    from scipy import integrate

    beta = 0.5
    tg = TimeGrid(1.0, 40)
    v = TimeSeries(tg, 2.0 - tg.nodes)  # varkappa' = -1
    k = kappa_weight(v, beta).values
    for n in (0, 10, 30):
        t = tg.nodes[n]
        ref = (1 - t) ** -beta * 1.0 + integrate.quad(lambda s: (s - t) ** -beta, t, 1.0)[0]
        assert k[n] == pytest.approx(ref / math.gamma(1 - beta), rel=1e-10)


@pytest.mark.parametrize("values", [[1.0, -0.1, 1.0], [0.0, 0.0, 0.0]])
def test_bad_weights_rejected(values):
    with pytest.raises(HypothesisViolation):
        Weighted(TimeSeries(TimeGrid(1.0, 2), values))


def test_apply_measure_forms():
    sg = SpaceGrid.interval(1.0, 2)
    tg = TimeGrid(1.0, 4)
    traj = Trajectory(tg, sg, np.outer(tg.nodes, [1.0, 2.0, 3.0]))
    np.testing.assert_allclose(apply_measure(traj, DiracAt(0.5)).values, [0.5, 1.0, 1.5])
    np.testing.assert_allclose(apply_measure(traj, DiracAt(0.5, mass=2.0)).values, [1.0, 2.0, 3.0])
    # the trapezoid rule is exact for linear integrands
    np.testing.assert_allclose(apply_measure(traj, Weighted.uniform(tg)).values, [0.5, 1.0, 1.5])
    mixed = MixedMeasure((DiracAt(1.0),), Weighted.uniform(tg))
    np.testing.assert_allclose(apply_measure(traj, mixed).values, [1.5, 3.0, 4.5])


@pytest.mark.parametrize("t_star", [0.0, -1.0, math.nan])
def test_bad_point_mass_rejected(t_star):
    with pytest.raises(ParameterError):
        DiracAt(t_star)


def test_point_mass_beyond_horizon_rejected():
    with pytest.raises(ParameterError):
        DiracAt(1.5).snap(TG)


def test_point_mass_snaps_and_reports_distance():
    n, dist = DiracAt(0.51).snap(TimeGrid(1.0, 10))
    assert n == 5 and dist == pytest.approx(0.01)


@given(arrays(np.float64, 33, elements=st.floats(-1e3, 1e3)))
@settings(max_examples=50, deadline=None)
def test_split_positive_negative(values):
    zp, zm = split_positive_negative(SpatialField(SG, values))
    assert np.all(zp.values >= 0) and np.all(zm.values >= 0)
    np.testing.assert_allclose(zp.values - zm.values, values, atol=1e-12)
    assert np.all(zp.values * zm.values == 0)


def test_spec_validation():
    p = problem()
    with pytest.raises(ShapeError):
        InverseProblemSpec(p, DiracAt(1.0), SpatialField.constant(SpaceGrid.interval(1.0, 4), 0.0))
    with pytest.raises(ParameterError):
        InverseProblemSpec(p, DiracAt(1.0), SpatialField.constant(SG, 0.0), relaxation=1.0)
    with pytest.raises(ShapeError):
        InverseProblemSpec(p, Weighted.uniform(TimeGrid(1.0, 8)), SpatialField.constant(SG, 0.0))


# }}}


# {{{ reconstruction


@pytest.fixture(scope="module")
def weighted_twin():
    return twin_spec(Weighted.uniform(TG))


@pytest.fixture(scope="module")
def final_time_twin():
    return twin_spec(DiracAt(1.0))


def test_twin_lies_in_the_weighted_regime(weighted_twin):
    traj = weighted_twin.forward(Z_TRUE)
    assert Z_TRUE.values.max() <= theta_zero(0.5, 1.0)
    assert traj.values.max() <= 0.5


def test_weighted_twin_reconstruction(weighted_twin):
    z, rep = reconstruct_weighted(weighted_twin)
    assert rep.converged and rep.iterations <= 50
    assert rel_err(z) < 1e-6
    assert all(c < 0.5 for c in rep.contraction_factors[1:])


def test_weighted_two_initializations_agree(weighted_twin):
    inner = SG.interior
    z1, _ = reconstruct(weighted_twin.with_z_init(np.zeros(SG.n_nodes)))
    z2, _ = reconstruct(weighted_twin.with_z_init(2 * Z_TRUE.values))
    assert np.max(np.abs(z1.values - z2.values)[inner]) < 1e-6


def test_boundary_coefficient_copied_from_neighbour(weighted_twin):
    z, _ = reconstruct(weighted_twin)
    assert z.values[0] == z.values[1] and z.values[-1] == z.values[-2]


def test_continuous_kappa_variant_has_discretization_bias(weighted_twin):
    with pytest.warns(UserWarning, match="no convergence"):
        z, rep = reconstruct_weighted(weighted_twin, kappa="continuous")
    assert 1e-6 < rel_err(z) < 5e-3


def test_final_time_twin_reconstruction(final_time_twin):
    z, rep = reconstruct_final_time(final_time_twin)
    assert rep.converged
    assert rel_err(z) < 1e-6


def test_pinned_final_time_variant_contracts_slowly(final_time_twin):
    with pytest.warns(UserWarning, match="no convergence"):
        z, rep = reconstruct_final_time(final_time_twin.with_z_init(np.zeros(SG.n_nodes)), pin=True)
    assert rel_err(z) < 1e-3
    assert np.median(rep.contraction_factors) > 0.5


def test_report_text_is_deterministic(weighted_twin):
    _, a = reconstruct(weighted_twin)
    _, b = reconstruct(weighted_twin)
    assert a.to_text(include_wall_time=False) == b.to_text(include_wall_time=False)


def test_wrong_measure_for_method_rejected(weighted_twin, final_time_twin):
    with pytest.raises(ParameterError):
        reconstruct_final_time(weighted_twin)
    with pytest.raises(ParameterError):
        reconstruct_weighted(final_time_twin)


def test_source_only_reaction_is_ill_posed():
    p = problem(SourceOnly(Z_TRUE, source=sine_source()))
    traj, _ = p.solve()
    mu = Weighted.uniform(TG)
    with pytest.raises(IllPosedError):
        reconstruct(InverseProblemSpec(p, mu, apply_measure(traj, mu)))


def test_vanishing_data_is_ill_posed_for_final_time():
    p = problem()
    with pytest.raises(IllPosedError):
        reconstruct(InverseProblemSpec(p, DiracAt(1.0), SpatialField.constant(SG, 0.0)))


def partly_vanishing_spec(max_iters):
    # data vanishing on a slab of nodes make a(d) vanish there
    p = problem()
    traj, _ = p.solve()
    d = apply_measure(traj, DiracAt(1.0)).values.copy()
    d[5:12] = 0.0
    return InverseProblemSpec(p, DiracAt(1.0), SpatialField(SG, d), max_iters=max_iters)


def test_partly_vanishing_data_warns():
    with pytest.warns(UserWarning) as record:
        reconstruct(partly_vanishing_spec(2))
    assert any(issubclass(w.category, IllPosedWarning) for w in record)


def test_persistent_flooring_escalates():
    with pytest.warns(IllPosedWarning), pytest.raises(IllPosedError) as exc:
        reconstruct(partly_vanishing_spec(10))
    assert exc.value.exit_code == 4


# }}}


# {{{ uniqueness and noise


def test_uniqueness_identical_coefficients(weighted_twin):
    rep = uniqueness_experiment(weighted_twin, Z_TRUE, Z_TRUE)
    assert rep.data_difference == 0.0 and rep.z_difference == 0.0
    assert rep.theorem == "weighted" and rep.theorem_applies


def test_uniqueness_distinct_coefficients_give_distinct_data(weighted_twin):
    z_b = SpatialField(SG, Z_TRUE.values - 0.1)
    rep = uniqueness_experiment(weighted_twin, Z_TRUE, z_b)
    assert rep.theorem_applies
    assert rep.z_difference == pytest.approx(0.1)
    assert rep.data_difference > 1e-8
    assert rep.annotation == "distinct coefficients give distinct data"


def test_uniqueness_outside_hypotheses_is_annotated(weighted_twin):
    z_big = SpatialField.constant(SG, 3.0)
    rep = uniqueness_experiment(weighted_twin, Z_TRUE, z_big)
    assert not rep.theorem_applies
    assert rep.annotation == "theorem not applicable"


def test_noise_study_is_reproducible(weighted_twin):
    a = noise_study(weighted_twin, Z_TRUE, level=0.01, seed=3)
    b = noise_study(weighted_twin, Z_TRUE, level=0.01, seed=3)
    assert a.noisy_error == b.noisy_error
    assert a.clean_error < 1e-6 < a.noisy_error


# }}}
