from __future__ import annotations

import numpy as np
import pytest

from fracinv.domain import (
    BoundaryCondition,
    EllipticOperator,
    SpaceGrid,
    SpatialField,
    apply_operator,
    check_ellipticity,
    enforce_boundary,
    steady_solve,
)
from fracinv.errors import DataError, HypothesisViolation, ParameterError, ShapeError
from fracinv.fracops import TimeGrid


def test_interval_grid_layout():
    g = SpaceGrid.interval(2.0, 4)
    np.testing.assert_allclose(g.coords[:, 0], [0, 0.5, 1.0, 1.5, 2.0])
    assert list(g.boundary) == [0, 4]
    assert list(g.interior) == [1, 2, 3]
    np.testing.assert_allclose(g.outward_normals, [[-1.0], [1.0]])


def test_rectangle_grid_layout():
    g = SpaceGrid.rectangle((1.0, 2.0), (2, 4))
    assert g.shape == (3, 5)
    assert g.n_nodes == 15
    assert g.interior.size == 3
    assert g.boundary.size == 12
    assert np.all(np.linalg.norm(g.outward_normals, axis=1) == pytest.approx(1.0))


@pytest.mark.parametrize("extents, cells", [((0.0,), (4,)), ((1.0,), (1,)), ((1.0, 1.0, 1.0), (2, 2, 2))])
def test_grid_rejects_bad_parameters(extents, cells):
    with pytest.raises((ParameterError, ShapeError)):
        SpaceGrid(extents, cells)


def test_spatial_field_validation():
    g = SpaceGrid.interval(1.0, 4)
    with pytest.raises(ShapeError):
        SpatialField(g, np.zeros(3))
    with pytest.raises(DataError):
        SpatialField(g, [0, 1, np.inf, 0, 0])


@pytest.mark.parametrize("dim", [1, 2])
def test_laplacian_exact_on_quadratics(dim):
    if dim == 1:
        g = SpaceGrid.interval(1.0, 8)
        u = SpatialField.from_function(g, lambda x: x**2)
        expected = 2.0
    else:
        g = SpaceGrid.rectangle((1.0, 1.0), (6, 6))
        u = SpatialField.from_function(g, lambda x, y: x**2 + 3 * x * y - y**2)
        expected = 0.0
    np.testing.assert_allclose(apply_operator(EllipticOperator.laplacian(g), u).values, expected, atol=1e-9)


def test_cross_term_and_drift():
    g = SpaceGrid.rectangle((1.0, 1.0), (8, 8))
    a = np.array([[2.0, 0.5], [0.5, 1.0]])
    op = EllipticOperator.constant(g, a, [1.0, -1.0])
    u = SpatialField.from_function(g, lambda x, y: x * y)
    # 2 a_12 + b . grad(xy)
    x, y = g.coords.T
    np.testing.assert_allclose(apply_operator(op, u).values, 1.0 + y - x, atol=1e-9)


def test_second_order_spatial_accuracy():
    errs = []
    for n in (16, 32, 64):
        g = SpaceGrid.interval(1.0, n)
        u = SpatialField.from_function(g, lambda x: np.sin(np.pi * x))
        Au = apply_operator(EllipticOperator.laplacian(g), u).values
        errs.append(np.abs(Au + np.pi**2 * u.values)[g.interior].max())
    assert np.log2(errs[0] / errs[1]) == pytest.approx(2.0, abs=0.1)


def test_ellipticity_constant_and_violation_location():
    g = SpaceGrid.interval(1.0, 4)
    assert check_ellipticity(EllipticOperator.laplacian(g, 0.3)) == pytest.approx(0.3)
    a = np.ones((1, 1, 5))
    a[0, 0, 3] = -0.1
    with pytest.raises(HypothesisViolation) as exc:
        check_ellipticity(EllipticOperator(g, a, np.zeros((1, 5))))
    assert "0.75" in str(exc.value)


def test_asymmetric_coefficients_rejected():
    g = SpaceGrid.rectangle((1.0, 1.0), (2, 2))
    with pytest.raises(DataError):
        EllipticOperator.constant(g, [[1.0, 0.2], [0.0, 1.0]])


def test_boundary_data_forms():
    g = SpaceGrid.interval(1.0, 4)
    tg = TimeGrid(1.0, 2)
    assert BoundaryCondition.dirichlet(g, tg, 2.0).g.shape == (3, 2)
    bc = BoundaryCondition.dirichlet(g, tg, lambda t, x: t + x)
    np.testing.assert_allclose(bc.g, [[0, 1], [0.5, 1.5], [1, 2]])
    assert not bc.time_constant
    with pytest.raises(ShapeError):
        BoundaryCondition.dirichlet(g, tg, np.zeros((4, 2)))
    with pytest.raises(ParameterError):
        BoundaryCondition(g, tg, "robin", 0.0)


def test_inward_oblique_direction_rejected():
    g = SpaceGrid.interval(1.0, 4)
    with pytest.raises(HypothesisViolation) as exc:
        BoundaryCondition.oblique(g, TimeGrid(1.0, 2), 0.0, omega=np.array([1.0]))
    assert "x=0" in str(exc.value).replace(" ", "") or "node 0" in str(exc.value)


@pytest.mark.parametrize("case", ["dirichlet", "oblique"])
def test_enforce_boundary_satisfies_relation(case):
    g = SpaceGrid.rectangle((1.0, 1.0), (4, 4))
    tg = TimeGrid(1.0, 2)
    bc = BoundaryCondition(g, tg, case, 0.7)
    u = SpatialField.from_function(g, lambda x, y: np.sin(3 * x) + y**2)
    v = enforce_boundary(bc, u, 1)
    np.testing.assert_allclose(v.values[g.interior], u.values[g.interior])
    np.testing.assert_allclose((bc.rows @ v.values)[g.boundary], 0.7, atol=1e-12)


def test_steady_solve_poisson():
    g = SpaceGrid.interval(1.0, 32)
    bc = BoundaryCondition.dirichlet(g, TimeGrid(1.0, 1), 0.0)
    s = np.full(g.n_nodes, 2.0)
    u = steady_solve(EllipticOperator.laplacian(g), bc, s)
    x = g.coords[:, 0]
    np.testing.assert_allclose(u.values, x * (1 - x), atol=1e-12)
