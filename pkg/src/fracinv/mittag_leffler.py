r"""One-parameter Mittag-Leffler function :math:`E_\alpha(z)` for real ``z``.

Three regimes are used:

* the power series :math:`\sum_m z^m / \Gamma(\alpha m + 1)` where it does not
  cancel, i.e. :math:`0 \le z \le 5` and :math:`-1 \le z < 0`;
* for other negative arguments, the integral representation

  .. math::

      E_\alpha(-x) = \frac{\sin \alpha\pi}{\alpha\pi} \int_0^\infty
          \frac{x\, e^{-r^{1/\alpha}}}{r^2 + 2 r x \cos\alpha\pi + x^2}
          \,\mathrm{d}r;

* for :math:`z > 5`, the same representation plus the exponential term
  :math:`\alpha^{-1} \exp(z^{1/\alpha})`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from scipy import integrate

from fracinv.errors import ParameterError

__all__ = ["MLResult", "mittag_leffler", "mittag_leffler_details"]

SERIES_RADIUS = 5.0
NEGATIVE_SERIES_RADIUS = 1.0
MAX_ARGUMENT = 40.0
MAX_TERMS = 10_000


@dataclass(frozen=True)
class MLResult:
    value: float
    method: str
    #: number of series terms summed (0 for the integral form)
    terms: int


def _series(alpha: float, z: float) -> tuple[float, int]:
    if z == 0.0:
        return 1.0, 1
    total = 0.0
    logz = math.log(abs(z))
    negative = z < 0
    # terms grow until m is about |z|^(1/alpha) / alpha and decay afterwards
    past_peak = abs(z) ** (1.0 / alpha) / alpha + 2.0
    for m in range(MAX_TERMS):
        term = math.exp(m * logz - math.lgamma(alpha * m + 1.0))
        total += -term if (negative and m % 2) else term
        if m > past_peak and term < 1.0e-17 * abs(total):
            return total, m + 1
    raise ParameterError(f"series did not converge in {MAX_TERMS} terms for z = {z}")


def _tail_integral(alpha: float, z: float) -> float:
    r"""Return :math:`\frac{1}{\alpha\pi}\int_0^\infty e^{-r^{1/\alpha}}
    \frac{-z \sin\alpha\pi}{r^2 - 2 r z \cos\alpha\pi + z^2} \mathrm{d}r`."""
    s, c = math.sin(alpha * math.pi), math.cos(alpha * math.pi)
    inv = 1.0 / alpha

    def integrand(r: float) -> float:
        return math.exp(-(r**inv)) * (-z * s) / (r * r - 2.0 * r * z * c + z * z)

    # the integrand is concentrated near r ~ |z| and decays like exp(-r^(1/a))
    upper = 50.0 ** alpha * 4.0
    points = sorted({abs(z), 1.0}) if abs(z) < upper else [1.0]
    head, _ = integrate.quad(
        integrand, 0.0, upper, points=points, epsabs=0.0, epsrel=1.0e-13, limit=800
    )
    rest, _ = integrate.quad(integrand, upper, math.inf, epsabs=0.0, epsrel=1.0e-13, limit=400)
    return (head + rest) / (alpha * math.pi)


def mittag_leffler_details(alpha: float, z: float) -> MLResult:
    """Evaluate :math:`E_\\alpha(z)` and report the regime used."""
    if not (0.0 < alpha <= 1.0):
        raise ParameterError(f"alpha must lie in (0, 1]: {alpha}")
    if not math.isfinite(z) or z > MAX_ARGUMENT:
        raise ParameterError(f"argument must be finite and <= {MAX_ARGUMENT}: {z}")

    if alpha == 1.0:
        return MLResult(math.exp(z), "exp", 0)

    if z > 0.0 and z ** (1.0 / alpha) > 700.0:
        raise ParameterError(f"E_{alpha}({z}) overflows double precision")

    if 0.0 <= z <= SERIES_RADIUS or -NEGATIVE_SERIES_RADIUS <= z < 0.0:
        value, terms = _series(alpha, z)
        return MLResult(value, "series", terms)

    tail = _tail_integral(alpha, z)
    if z < 0.0:
        return MLResult(tail, "integral", 0)

    lead = math.exp(z ** (1.0 / alpha)) / alpha
    return MLResult(lead + tail, "integral", 0)


def mittag_leffler(alpha: float, z: float) -> float:
    r"""Return :math:`E_\alpha(z) = \sum_{m \ge 0} z^m / \Gamma(\alpha m + 1)`."""
    return mittag_leffler_details(alpha, z).value
