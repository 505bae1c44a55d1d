from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from fracinv.errors import DataError, HypothesisViolation, ParameterError, ShapeError
from fracinv.fracops import (
    FractionalPowerKernel,
    TabulatedKernel,
    TimeGrid,
    TimeSeries,
    caputo_l1,
    caputo_l1_corrected,
    correction_exponents,
    frac_integral,
    generalized_derivative,
    kernel_shift,
    memory_coefficients,
    relaxation_l1,
    shift_coefficient,
    shift_tail_integral,
    starting_weights,
)
from fracinv.mittag_leffler import mittag_leffler


def power_series(grid, sigma):
    return TimeSeries.from_function(grid, lambda t: t**sigma)


def caputo_power(sigma, beta, t):
    return math.gamma(sigma + 1) / math.gamma(sigma + 1 - beta) * t ** (sigma - beta)


# {{{ grids and series


def test_time_grid_nodes_end_exactly_at_T():
    g = TimeGrid(0.7, 3)
    assert g.nodes[-1] == 0.7
    assert g.tau == pytest.approx(0.7 / 3)
    assert g.nearest(0.5) == (2, pytest.approx(abs(0.7 * 2 / 3 - 0.5)))


@pytest.mark.parametrize("T, n", [(0.0, 4), (-1.0, 4), (1.0, 0), (1.0, 2.5), (math.inf, 4)])
def test_time_grid_rejects_bad_parameters(T, n):
    with pytest.raises(ParameterError):
        TimeGrid(T, n)


def test_time_series_validates_shape_and_values():
    g = TimeGrid(1.0, 4)
    with pytest.raises(ShapeError):
        TimeSeries(g, np.zeros(4))
    with pytest.raises(DataError):
        TimeSeries(g, [0, 1, np.nan, 2, 3])


# }}}


# {{{ L1 derivative


@pytest.mark.parametrize("beta", [0.3, 0.5, 0.8])
def test_l1_is_exact_for_linear_functions(beta):
    g = TimeGrid(2.0, 16)
    d = caputo_l1(power_series(g, 1.0), beta).values
    np.testing.assert_allclose(d[1:], caputo_power(1.0, beta, g.nodes[1:]), rtol=1e-12)


def test_l1_of_constant_is_zero():
    g = TimeGrid(1.0, 10)
    assert np.all(caputo_l1(TimeSeries(g, np.full(11, 3.0)), 0.4).values == 0.0)


@pytest.mark.parametrize("beta", [0.3, 0.5, 0.8])
def test_l1_order_on_smooth_function(beta):
    errs = []
    for n in (32, 64, 128):
        g = TimeGrid(1.0, n)
        d = caputo_l1(power_series(g, 2.0), beta).values
        errs.append(np.max(np.abs(d[1:] - caputo_power(2.0, beta, g.nodes[1:]))))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 2 - beta - 0.1)


def test_l1_acts_on_trailing_axes():
    g = TimeGrid(1.0, 8)
    t = g.nodes
    u = np.stack([t**2, 3 * t**2], axis=1)
    d = caputo_l1(TimeSeries(g, u), 0.5).values
    np.testing.assert_allclose(d[:, 1], 3 * d[:, 0], rtol=1e-14)


@given(st.floats(0.05, 0.95), st.floats(-3, 3), st.floats(-3, 3))
@settings(max_examples=30, deadline=None)
def test_l1_is_linear(beta, a, b):
    g = TimeGrid(1.0, 12)
    t = g.nodes
    u, v = np.sin(t), t**1.5
    lhs = caputo_l1(TimeSeries(g, a * u + b * v), beta).values
    rhs = a * caputo_l1(TimeSeries(g, u), beta).values + b * caputo_l1(TimeSeries(g, v), beta).values
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


@pytest.mark.parametrize("beta", [0.0, 1.0, -0.2, 1.5, math.nan])
def test_l1_rejects_bad_order(beta):
    with pytest.raises(ParameterError):
        caputo_l1(TimeSeries(TimeGrid(1.0, 4), np.zeros(5)), beta)


def test_generalized_derivative_matches_l1_for_power_kernel():
    g = TimeGrid(1.0, 20)
    s = TimeSeries.from_function(g, np.sin)
    np.testing.assert_allclose(
        generalized_derivative(s, FractionalPowerKernel(0.6)).values,
        caputo_l1(s, 0.6).values,
        rtol=1e-13,
    )


def test_memory_coefficients_positive_decreasing():
    g = TimeGrid(1.0, 50)
    c = memory_coefficients(FractionalPowerKernel(0.4), g)
    assert np.all(c > 0) and np.all(np.diff(c) < 0)


# }}}


# {{{ kernels


def test_tabulated_kernel_monotonicity_violation_names_node():
    g = TimeGrid(1.0, 4)
    k = TabulatedKernel(np.array([3.0, 2.0, 2.5, 1.0]))
    with pytest.raises(HypothesisViolation) as exc:
        k.check(g)
    assert "2" in str(exc.value)


def test_tabulated_kernel_rejects_nonpositive_values():
    with pytest.raises((HypothesisViolation, DataError, ParameterError)):
        TabulatedKernel(np.array([1.0, 0.0, -1.0])).check(TimeGrid(1.0, 3))


def test_power_kernel_tabulation_converges_to_l1():
    errs = []
    for n in (32, 128, 512):
        g = TimeGrid(1.0, n)
        k = FractionalPowerKernel(0.3)
        s = TimeSeries.from_function(g, lambda t: t**2)
        errs.append(abs(generalized_derivative(s, k.tabulate(g)).values[-1] - caputo_l1(s, 0.3).values[-1]))
    assert errs[0] > errs[1] > errs[2]


# }}}


# {{{ fractional integral


@pytest.mark.parametrize("gamma", [0.2, 0.5, 0.7, 1.3])
def test_frac_integral_exact_on_linear_data(gamma):
    g = TimeGrid(1.5, 10)
    s = TimeSeries.from_function(g, lambda t: 2.0 + 3.0 * t)
    t = g.nodes
    exact = 2.0 * t**gamma / math.gamma(gamma + 1) + 3.0 * t ** (gamma + 1) / math.gamma(gamma + 2)
    np.testing.assert_allclose(frac_integral(s, gamma).values, exact, rtol=1e-12, atol=1e-15)


def test_frac_integral_against_quadrature():
    g = TimeGrid(1.0, 400)
    gamma = 0.4
    out = frac_integral(TimeSeries.from_function(g, np.cos), gamma).values
    for n in (100, 250, 400):
        t = g.nodes[n]
        ref = integrate.quad(lambda s: np.cos(s), 0, t, weight="alg", wvar=(0, gamma - 1))[0]
        assert out[n] == pytest.approx(ref / math.gamma(gamma), abs=1e-6)


@pytest.mark.parametrize("beta", [0.3, 0.5, 0.8])
def test_round_trip_with_vanishing_start(beta):
    errs = []
    for n in (64, 128, 256):
        g = TimeGrid(1.0, n)
        w = TimeSeries.from_function(g, lambda t: t**2)
        back = caputo_l1(frac_integral(w, beta), beta).values
        errs.append(np.max(np.abs(back - w.values)))
    assert np.all(np.log2(np.array(errs[:-1]) / errs[1:]) > 2 - beta - 0.2)


# }}}


# {{{ starting corrections


def test_correction_exponents_rule():
    assert correction_exponents(0.3) == pytest.approx((0.3, 0.6, 0.9, 1.0))
    assert correction_exponents(0.5) == pytest.approx((0.5, 1.0))
    assert correction_exponents(0.8) == pytest.approx((0.8, 1.0))
    assert len(correction_exponents(0.05)) == 8


@pytest.mark.parametrize("beta", [0.3, 0.5, 0.8])
def test_corrected_operator_exact_on_correction_monomials(beta):
    g = TimeGrid(1.0, 40)
    for sigma in correction_exponents(beta):
        d = caputo_l1_corrected(power_series(g, sigma), beta).values
        np.testing.assert_allclose(d[1:], caputo_power(sigma, beta, g.nodes[1:]), rtol=1e-8)


def test_starting_weights_shape():
    sw = starting_weights(0.3, 20)
    assert sw.omega.shape == (21, 4)
    assert np.all(sw.omega[0] == 0.0)


@pytest.mark.parametrize("beta", [0.3, 0.5, 0.8])
@pytest.mark.parametrize("lam", [1.0, 5.0])
def test_relaxation_matches_mittag_leffler(beta, lam):
    g = TimeGrid(1.0, 512)
    u = relaxation_l1(lam, beta, g).values
    exact = np.array([mittag_leffler(beta, -lam * t**beta) for t in g.nodes])
    assert np.max(np.abs(u - exact) / exact) < 5e-4 * lam


def test_uncorrected_relaxation_is_worse_near_zero():
    g = TimeGrid(1.0, 256)
    exact = np.array([mittag_leffler(0.5, -t**0.5) for t in g.nodes])
    plain = np.abs(relaxation_l1(1.0, 0.5, g, corrected=False).values - exact).max()
    corr = np.abs(relaxation_l1(1.0, 0.5, g).values - exact).max()
    assert corr < plain


# }}}


# {{{ exponential shift


@pytest.mark.parametrize("sigma", [0.0, 0.5, 3.0])
def test_shift_coefficient_against_quadrature(sigma):
    g = TimeGrid(1.0, 50)
    beta = 0.4
    k = FractionalPowerKernel(beta)
    ref = sigma * integrate.quad(lambda s: math.exp(-sigma * s), 0, 1, weight="alg", wvar=(-beta, 0))[0]
    assert shift_coefficient(k, sigma, g) == pytest.approx(ref / math.gamma(1 - beta), rel=1e-10, abs=1e-14)


def test_shift_tail_integral_against_quadrature():
    g = TimeGrid(1.0, 10)
    beta, sigma = 0.5, 2.0
    tail = shift_tail_integral(FractionalPowerKernel(beta), sigma, g)
    for n in (0, 4, 9):
        ref = integrate.quad(lambda s: math.exp(-sigma * s) * s**-beta, g.nodes[n], 1.0)[0]
        assert tail[n] == pytest.approx(ref / math.gamma(1 - beta), rel=1e-9)
    assert tail[-1] == 0.0


@pytest.mark.parametrize("sigma", [0.1, 2.0, 20.0])
def test_shifted_kernel_stays_positive_nonincreasing(sigma):
    g = TimeGrid(1.0, 64)
    for k in (FractionalPowerKernel(0.5), FractionalPowerKernel(0.5).tabulate(g)):
        kt = kernel_shift(k, sigma, g)
        kt.check(g)
        v = kt.midpoint_values(g)
        assert np.all(v > 0) and np.all(np.diff(v) <= 0)


def test_shifted_tabulated_kernel_agrees_with_exact_form():
    g = TimeGrid(1.0, 400)
    k = FractionalPowerKernel(0.5)
    exact = kernel_shift(k, 1.5, g).midpoint_values(g)
    tab = kernel_shift(k.tabulate(g), 1.5, g).midpoint_values(g)
    assert np.max(np.abs(tab - exact) / exact) < 5e-2


# }}}
