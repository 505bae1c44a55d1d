"""Fractional derivative and integral on a uniform grid.

Run with ``python3 demos/01_operators.py``. Shows the L1 derivative, its
starting-corrected variant, the product-trapezoid fractional integral and
the Mittag-Leffler function used as an oracle.
"""

from __future__ import annotations

import math

import numpy as np

from fracinv.fracops import (
    TimeGrid,
    TimeSeries,
    caputo_l1,
    caputo_l1_corrected,
    correction_exponents,
    frac_integral,
    relaxation_l1,
)
from fracinv.mittag_leffler import mittag_leffler, mittag_leffler_details

beta = 0.5

# The plain L1 derivative of t^2 converges like tau^(2 - beta).
print("L1 derivative of t^2, beta = 0.5")
for n in (32, 64, 128, 256):
    g = TimeGrid(1.0, n)
    d = caputo_l1(TimeSeries.from_function(g, lambda t: t**2), beta).values
    exact = 2.0 / math.gamma(3 - beta) * g.nodes ** (2 - beta)
    print(f"  N = {n:4d}  max error = {np.max(np.abs(d - exact)):.3e}")

# Non-smooth data such as sqrt(t) break the plain scheme near t = 0; the
# starting correction is exact on t^(k beta) and t.
g = TimeGrid(1.0, 64)
s = TimeSeries.from_function(g, np.sqrt)
exact = math.gamma(1.5) / math.gamma(1.5 - beta) * g.nodes ** (0.5 - beta)
plain = np.max(np.abs(caputo_l1(s, beta).values[1:] - exact[1:]))
fixed = np.max(np.abs(caputo_l1_corrected(s, beta).values[1:] - exact[1:]))
print(f"\nsqrt(t): plain L1 error {plain:.3e}, corrected {fixed:.3e}")
print(f"correction exponents for beta = 0.3: {correction_exponents(0.3)}")

# The integral followed by the derivative gives the identity back.
w = TimeSeries.from_function(g, lambda t: t**2)
back = caputo_l1(frac_integral(w, beta), beta).values
print(f"\nround trip of t^2 at N = 64: max error {np.max(np.abs(back - w.values)):.3e}")

# Relaxation u' = -lam u in fractional form has the solution E_beta(-lam t^beta).
lam = 2.0
g = TimeGrid(1.0, 1024)
u = relaxation_l1(lam, beta, g).values
ml = np.array([mittag_leffler(beta, -lam * t**beta) for t in g.nodes])
print(f"\nrelaxation, lam = {lam}: max relative error {np.max(np.abs(u - ml) / ml):.3e}")

for alpha, z in ((0.5, -0.5), (0.5, -8.0), (0.8, 10.0)):
    r = mittag_leffler_details(alpha, z)
    print(f"E_{alpha}({z}) = {r.value:.15g}  [{r.method}]")
