"""Auditing the uniqueness hypotheses and the closed-form sufficient
conditions for the linear, Fisher and Zeldovich reactions.

Run with ``python3 demos/05_conditions.py``.
"""

from __future__ import annotations

import numpy as np

from fracinv.conditions import (
    audit_general,
    audit_weighted,
    audit_monotone,
    closed_form_conditions,
    theta_zero,
)
from fracinv.domain import BoundaryCondition, EllipticOperator, SpaceGrid, SpatialField
from fracinv.forward import solve_l1
from fracinv.fracops import TimeGrid, TimeSeries
from fracinv.reactions import Fisher, FunctionSource, LinearPotential, Zeldovich

beta = 0.5
sg = SpaceGrid.interval(1.0, 32)
tg = TimeGrid(1.0, 64)
op = EllipticOperator.laplacian(sg)
bc = BoundaryCondition.dirichlet(sg, tg, 0.0)
ones = TimeSeries(tg, np.ones(tg.n_steps + 1))
src = FunctionSource(lambda t, x: 2 * t * np.sin(np.pi * x), lambda t, x: 2 * np.sin(np.pi * x))
th0 = theta_zero(beta, 1.0)
print(f"theta_0 = T^-beta / Gamma(1 - beta) = {th0:.6f}\n")

for case, cls, z in ((1, LinearPotential, 0.5), (2, Fisher, 0.5), (3, Zeldovich, 1.0)):
    kw = {} if cls is LinearPotential else {"W": 1.0}
    r = cls(SpatialField.constant(sg, z), source=src, **kw)
    u, _ = solve_l1(op, bc, r, np.zeros(sg.n_nodes), beta)
    general = audit_general(u, r, None, beta)
    weighted = audit_weighted(u, r, None, beta, ones)
    monotone = audit_monotone(u, r, None, beta, op=op, bc=bc)
    print(f"{cls.__name__}, z = {z}, max u = {u.values.max():.3f}")
    for name, audit, thm in (("general", general, 3), ("weighted", weighted, 4)):
        closed = closed_form_conditions(case, beta, 1.0, 1.0, z, u.values.max(), thm, audit=audit)
        failed = [e.id for e in audit.entries if not e.ok]
        print(f"  {name:8s} audit {'PASS' if audit.passed else 'FAIL ' + ', '.join(failed)}; "
              f"closed form {'PASS' if closed.passed else 'FAIL'}")
    print(f"  monotone: u_t >= 0 {monotone['ut_nonnegative'].status}, "
          f"theta = {monotone.theta:.4f} ({monotone['theta_lower_bound'].status})\n")

print("The Fisher reaction has a_ww = -2/W, so the general cone condition rules out")
print("every positive z; the weighted conditions accept z up to theta_0.")
