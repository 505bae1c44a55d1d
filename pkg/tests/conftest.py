from __future__ import annotations

import numpy as np
import pytest

from fracinv.domain import BoundaryCondition, EllipticOperator, SpaceGrid, SpatialField
from fracinv.forward import DirectProblem
from fracinv.fracops import FractionalPowerKernel, TimeGrid
from fracinv.reactions import Fisher, FunctionSource


def sine_source(scale: float = 2.0) -> FunctionSource:
    """b(t, x) = scale * t * sin(pi x): zero at t = 0, increasing in t."""
    return FunctionSource(
        lambda t, x: scale * t * np.sin(np.pi * x),
        lambda t, x: scale * np.sin(np.pi * x),
    )


def fisher_problem(
    z=0.5, *, beta=0.5, T=1.0, n_steps=64, n_cells=32, W=1.0, scale=2.0
) -> DirectProblem:
    """Zero initial and boundary data, Fisher reaction, sine source."""
    sg = SpaceGrid.interval(1.0, n_cells)
    tg = TimeGrid(T, n_steps)
    zf = z if isinstance(z, SpatialField) else SpatialField(sg, np.broadcast_to(z, (sg.n_nodes,)))
    return DirectProblem(
        EllipticOperator.laplacian(sg),
        BoundaryCondition.dirichlet(sg, tg, 0.0),
        Fisher(zf, W=W, source=sine_source(scale)),
        SpatialField.constant(sg, 0.0),
        FractionalPowerKernel(beta),
    )


@pytest.fixture
def small_problem() -> DirectProblem:
    return fisher_problem(n_steps=32, n_cells=16)


#: (criterion, passed, detail, seconds), filled by the acceptance suite
ACCEPTANCE: list[tuple[int, bool, str, float]] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k, ok, detail, secs in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'} {detail} ({secs:.2f} s)")
