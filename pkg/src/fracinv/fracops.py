r"""Discrete fractional calculus on uniform time grids.

Conventions
-----------
A :class:`TimeGrid` has nodes :math:`t_n = n\tau`, :math:`n = 0, \dots, N`.
Memory kernels act on increments: the discrete derivative with kernel
:math:`k` is

.. math::

    D^{\{k\}} w(t_n) \approx \frac{1}{\tau} \sum_{j=1}^{n}
        K_{n-j} (w_j - w_{j-1}),
    \qquad K_m = \int_{m\tau}^{(m+1)\tau} k(s) \,\mathrm{d}s,

which is the L1 scheme when :math:`k(t) = t^{-\beta} / \Gamma(1 - \beta)`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from fracinv.errors import DataError, HypothesisViolation, ParameterError, ShapeError

__all__ = [
    "FractionalPowerKernel",
    "Kernel",
    "StartingWeights",
    "TabulatedKernel",
    "TimeGrid",
    "TimeSeries",
    "caputo_l1",
    "caputo_l1_corrected",
    "correction_exponents",
    "frac_integral",
    "generalized_derivative",
    "kernel_shift",
    "memory_coefficients",
    "relaxation_l1",
    "shift_coefficient",
    "shift_tail_integral",
    "starting_weights",
]


# {{{ grids and series


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on :math:`[0, T]` with ``n_steps`` intervals."""

    T: float
    n_steps: int

    def __post_init__(self) -> None:
        if not (math.isfinite(self.T) and self.T > 0):
            raise ParameterError(f"final time must be positive: T = {self.T}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ParameterError(f"n_steps must be a positive integer: {self.n_steps}")

    @property
    def tau(self) -> float:
        return self.T / self.n_steps

    @property
    def nodes(self) -> np.ndarray:
        # computed as n * tau so that t_N == T exactly
        t = np.arange(self.n_steps + 1) * self.tau
        t[-1] = self.T
        return t

    @property
    def midpoints(self) -> np.ndarray:
        return (np.arange(self.n_steps) + 0.5) * self.tau

    def nearest(self, t: float) -> tuple[int, float]:
        """Index of the node closest to *t* and the snap distance."""
        n = int(np.clip(round(t / self.tau), 0, self.n_steps))
        return n, abs(float(self.nodes[n]) - t)


@dataclass(frozen=True)
class TimeSeries:
    """Scalar (or vector-valued per node) samples on a :class:`TimeGrid`.

    The first axis of :attr:`values` runs over time nodes; any trailing axes
    are carried along, which lets the operators act on whole space-time
    fields at once.
    """

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 0 or values.shape[0] != self.grid.n_steps + 1:
            raise ShapeError(
                f"series has {values.shape[:1]} nodes, grid expects "
                f"{self.grid.n_steps + 1}"
            )
        if not np.all(np.isfinite(values)):
            bad = np.argwhere(~np.isfinite(values))[0]
            raise DataError(f"non-finite series value at node {tuple(bad)}")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(cls, grid: TimeGrid, fn) -> TimeSeries:
        return cls(grid, np.asarray(fn(grid.nodes), dtype=np.float64))


def _check_order(beta: float, name: str = "beta") -> float:
    if not (0.0 < beta < 1.0):
        raise ParameterError(f"{name} must lie in (0, 1): {beta}")
    return float(beta)


# }}}


# {{{ kernels


class Kernel:
    """Memory kernel :math:`k(t)`, positive and locally integrable on ``(0, T]``."""

    def cell_integrals(self, grid: TimeGrid) -> np.ndarray:
        """Return :math:`K_m` for ``m = 0, ..., N - 1``."""
        raise NotImplementedError

    def midpoint_values(self, grid: TimeGrid) -> np.ndarray:
        """Kernel sampled at the cell midpoints."""
        raise NotImplementedError

    def check(self, grid: TimeGrid) -> None:
        """Raise :class:`HypothesisViolation` if the kernel is not positive
        and (when declared) non-increasing."""
        raise NotImplementedError

    def tabulate(self, grid: TimeGrid) -> TabulatedKernel:
        return TabulatedKernel(self.midpoint_values(grid), declared_monotone=True)


@dataclass(frozen=True)
class FractionalPowerKernel(Kernel):
    r"""The kernel :math:`k(t) = t^{-\beta} / \Gamma(1 - \beta)`."""

    beta: float

    def __post_init__(self) -> None:
        _check_order(self.beta)

    def __call__(self, t: np.ndarray | float) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        with np.errstate(divide="ignore"):
            return t ** (-self.beta) / math.gamma(1.0 - self.beta)

    def cell_integrals(self, grid: TimeGrid) -> np.ndarray:
        m = np.arange(grid.n_steps, dtype=np.float64)
        s = 1.0 - self.beta
        return grid.tau**s * ((m + 1.0) ** s - m**s) / math.gamma(2.0 - self.beta)

    def midpoint_values(self, grid: TimeGrid) -> np.ndarray:
        return self(grid.midpoints)

    def check(self, grid: TimeGrid) -> None:
        # positive and strictly decreasing by construction
        return None


@dataclass(frozen=True)
class TabulatedKernel(Kernel):
    """Kernel given by its values at the cell midpoints of a grid.

    The kernel is treated as piecewise constant on each cell, so it is never
    evaluated at :math:`t = 0`.
    """

    values: np.ndarray
    declared_monotone: bool = True

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size == 0:
            raise ShapeError("tabulated kernel needs a non-empty 1D value array")
        if not np.all(np.isfinite(values)):
            raise DataError("tabulated kernel has non-finite values")
        object.__setattr__(self, "values", values)

    def _match(self, grid: TimeGrid) -> None:
        if self.values.size != grid.n_steps:
            raise ShapeError(
                f"kernel has {self.values.size} cells, grid has {grid.n_steps}"
            )

    def cell_integrals(self, grid: TimeGrid) -> np.ndarray:
        self._match(grid)
        return grid.tau * self.values

    def midpoint_values(self, grid: TimeGrid) -> np.ndarray:
        self._match(grid)
        return self.values

    def check(self, grid: TimeGrid) -> None:
        self._match(grid)
        nonpos = np.flatnonzero(self.values <= 0.0)
        if nonpos.size:
            raise HypothesisViolation("kernel is not positive", where=int(nonpos[0]))
        if self.declared_monotone:
            # allow round-off sized increases only
            scale = np.abs(self.values[:-1]) * 1.0e-13
            rising = np.flatnonzero(np.diff(self.values) > scale)
            if rising.size:
                raise HypothesisViolation(
                    "kernel is not non-increasing", where=int(rising[0]) + 1
                )

    def __add__(self, other: TabulatedKernel) -> TabulatedKernel:
        return TabulatedKernel(
            self.values + other.values,
            declared_monotone=self.declared_monotone and other.declared_monotone,
        )


def memory_coefficients(kernel: Kernel, grid: TimeGrid) -> np.ndarray:
    """Coefficients :math:`c_m = K_m / \\tau` of the increment convolution."""
    return kernel.cell_integrals(grid) / grid.tau


# }}}


# {{{ operators


def _l1_weights(beta: float, n: int) -> np.ndarray:
    m = np.arange(n, dtype=np.float64)
    return (m + 1.0) ** (1.0 - beta) - m ** (1.0 - beta)


def _increment_convolution(coeffs: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Return ``out[n] = sum_{j=1}^{n} coeffs[n - j] * (v[j] - v[j-1])``."""
    inc = np.diff(values, axis=0)
    n = inc.shape[0]
    out = np.zeros_like(values)
    if values.ndim == 1:
        out[1:] = np.convolve(coeffs[:n], inc)[:n]
    else:
        flat = inc.reshape(n, -1)
        res = np.empty_like(flat)
        for i in range(flat.shape[1]):
            res[:, i] = np.convolve(coeffs[:n], flat[:, i])[:n]
        out[1:] = res.reshape(inc.shape)
    return out


def caputo_l1(series: TimeSeries, beta: float) -> TimeSeries:
    r"""L1 approximation of :math:`D_t^\beta [w - w(0)]` at every node.

    The value at :math:`t_0` is zero by convention.
    """
    beta = _check_order(beta)
    grid = series.grid
    coeffs = grid.tau ** (-beta) / math.gamma(2.0 - beta) * _l1_weights(beta, grid.n_steps)
    return TimeSeries(grid, _increment_convolution(coeffs, series.values))


def generalized_derivative(series: TimeSeries, kernel: Kernel) -> TimeSeries:
    r"""Discrete :math:`\frac{\mathrm{d}}{\mathrm{d}t} (k * (w - w(0)))`."""
    grid = series.grid
    kernel.check(grid)
    coeffs = memory_coefficients(kernel, grid)
    return TimeSeries(grid, _increment_convolution(coeffs, series.values))


def _trapezoid_weights(gamma: float, n: int) -> np.ndarray:
    k = np.arange(n + 1, dtype=np.float64)
    g1 = gamma + 1.0
    c = (k + 1.0) ** g1 - 2.0 * k**g1 + np.abs(k - 1.0) ** g1
    c[0] = 1.0
    return c


def frac_integral(series: TimeSeries, gamma: float) -> TimeSeries:
    r"""Product-trapezoid approximation of :math:`J_t^\gamma w`.

    The singular factor :math:`(t - s)^{\gamma - 1}` is integrated exactly
    against the piecewise-linear interpolant of :math:`w`, so the rule is exact
    for linear data.
    """
    if not (math.isfinite(gamma) and gamma > 0.0):
        raise ParameterError(f"integration order must be positive: {gamma}")

    grid = series.grid
    w = series.values
    N = grid.n_steps
    g1 = gamma + 1.0

    c = _trapezoid_weights(gamma, N)
    n = np.arange(1, N + 1, dtype=np.float64)
    first = (n - 1.0) ** g1 - (n - 1.0 - gamma) * n**gamma

    tail = w[1:]
    out = np.zeros_like(w)
    if w.ndim == 1:
        conv = np.convolve(c[:N], tail)[:N]
    else:
        flat = tail.reshape(N, -1)
        conv = np.empty_like(flat)
        for i in range(flat.shape[1]):
            conv[:, i] = np.convolve(c[:N], flat[:, i])[:N]
        conv = conv.reshape(tail.shape)

    first = first.reshape((N,) + (1,) * (w.ndim - 1))
    out[1:] = conv + first * w[0]
    out *= grid.tau**gamma / math.gamma(gamma + 2.0)
    return TimeSeries(grid, out)


# }}}


# {{{ starting corrections


def correction_exponents(beta: float, max_terms: int = 8) -> tuple[float, ...]:
    r"""Exponents :math:`\sigma` whose monomials :math:`t^\sigma` are made exact.

    Solutions of time-fractional problems behave like :math:`\sum_k c_k
    t^{k\beta}` near :math:`t = 0`, and the L1 scheme loses accuracy on the
    terms with :math:`k\beta < 1`. Those are corrected, together with
    :math:`\sigma = 1` so that the corrected operator stays exact on linear
    data. Adding exponents above one makes the weight system badly
    conditioned and degrades the order on smooth data, so they are left out.
    """
    beta = _check_order(beta)
    singular = [k * beta for k in range(1, max_terms) if k * beta < 1.0 - 1.0e-9]
    return tuple(singular[: max_terms - 1]) + (1.0,)


@dataclass(frozen=True)
class StartingWeights:
    r"""Starting-quadrature correction for the L1 scheme.

    The corrected operator reads

    .. math::

        D_\tau^\beta w(t_n) = \mathrm{L1}(w)(t_n) + \tau^{-\beta}
            \sum_{j=1}^{m} \omega_{n,j} (w_j - w_0),

    where :math:`\omega_{n,\cdot}` is chosen so that the operator is exact
    for :math:`t^\sigma`, :math:`\sigma \in` :attr:`exponents`. The weights
    are independent of :math:`\tau`.
    """

    beta: float
    exponents: tuple[float, ...]
    #: array of shape ``(N + 1, m)``; row 0 is zero
    omega: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.exponents)


def starting_weights(
    beta: float, n_steps: int, exponents: tuple[float, ...] | None = None
) -> StartingWeights:
    beta = _check_order(beta)
    if exponents is None:
        exponents = correction_exponents(beta)
    m = min(len(exponents), n_steps)
    exponents = tuple(exponents[:m])
    omega = np.zeros((n_steps + 1, m))
    if m == 0:
        return StartingWeights(beta, exponents, omega)

    j = np.arange(1, m + 1, dtype=np.float64)
    n = np.arange(n_steps + 1, dtype=np.float64)
    b = _l1_weights(beta, n_steps) / math.gamma(2.0 - beta)

    V = np.array([j**s for s in exponents])
    rhs = np.empty((m, n_steps + 1))
    for k, s in enumerate(exponents):
        exact = math.gamma(s + 1.0) / math.gamma(s + 1.0 - beta) * n ** (s - beta)
        rhs[k] = exact - _increment_convolution(b, n**s)
    rhs[:, 0] = 0.0

    omega = np.linalg.solve(V, rhs).T
    omega[0] = 0.0
    return StartingWeights(beta, exponents, omega)


def caputo_l1_corrected(
    series: TimeSeries, beta: float, exponents: tuple[float, ...] | None = None
) -> TimeSeries:
    """L1 derivative with starting corrections (see :class:`StartingWeights`)."""
    plain = caputo_l1(series, beta)
    sw = starting_weights(beta, series.grid.n_steps, exponents)
    w = series.values
    inc = w[1 : sw.size + 1] - w[0]
    extra = np.tensordot(sw.omega, inc, axes=(1, 0))
    return TimeSeries(series.grid, plain.values + series.grid.tau ** (-beta) * extra)


def relaxation_l1(
    lam: float,
    beta: float,
    grid: TimeGrid,
    *,
    u0: float = 1.0,
    corrected: bool = True,
) -> TimeSeries:
    r"""Implicit solution of :math:`D_t^\beta u = -\lambda u`, :math:`u(0) = u_0`.

    With ``corrected=True`` the operator of :func:`caputo_l1_corrected` is
    used; the first :math:`m` levels are coupled through the correction and
    are solved as one small dense system.
    """
    beta = _check_order(beta)
    N = grid.n_steps
    scale = grid.tau ** (-beta)
    b = scale * _l1_weights(beta, N) / math.gamma(2.0 - beta)
    omega = scale * starting_weights(beta, N).omega if corrected else np.zeros((N + 1, 0))
    m = omega.shape[1]

    u = np.empty(N + 1)
    u[0] = u0

    # coupled start block: unknowns u_1..u_m
    if m:
        C = np.zeros((m, m))
        rhs = np.zeros(m)
        for n in range(1, m + 1):
            # L1 part: sum_{k=1}^{n} b_{n-k} (u_k - u_{k-1})
            for k in range(1, n + 1):
                C[n - 1, k - 1] += b[n - k]
                if k > 1:
                    C[n - 1, k - 2] -= b[n - k]
                else:
                    rhs[n - 1] += b[n - k] * u0
            C[n - 1, :] += omega[n, :]
            rhs[n - 1] += omega[n, :].sum() * u0
            C[n - 1, n - 1] += lam
        u[1 : m + 1] = np.linalg.solve(C, rhs)

    inc = np.zeros(N)
    inc[:m] = np.diff(u[: m + 1])
    for n in range(m + 1, N + 1):
        hist = b[n - 1 : 0 : -1] @ inc[: n - 1] if n > 1 else 0.0
        corr = omega[n] @ (u[1 : m + 1] - u0) if m else 0.0
        # b_0 (u_n - u_{n-1}) + hist + corr + lam u_n = 0
        u[n] = (b[0] * u[n - 1] - hist - corr) / (b[0] + lam)
        inc[n - 1] = u[n] - u[n - 1]

    return TimeSeries(grid, u)


# }}}


# {{{ exponential shift of kernels


def _shifted_power(beta: float, sigma: float, T: float, t: np.ndarray) -> np.ndarray:
    r"""Exact :math:`\tilde k(t)` for the fractional power kernel.

    Uses :math:`\int_a^b e^{-\sigma s} s^{-\beta} \mathrm{d}s / \Gamma(1-\beta)
    = \sigma^{\beta - 1} [P(1-\beta, \sigma b) - P(1-\beta, \sigma a)]` with
    the regularized incomplete gamma function :math:`P`.
    """
    a = 1.0 - beta
    x = sigma * t
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        head = np.exp(-x) * t ** (-beta) / math.gamma(a)
        # sigma^beta * [Q(a, x) - Q(a, sigma T)] rewritten with upper tails to
        # avoid subtracting two numbers close to one
        tail = sigma**beta * (special.gammaincc(a, x) - special.gammaincc(a, sigma * T))
    return head - tail


def kernel_shift(kernel: Kernel, sigma: float, grid: TimeGrid) -> TabulatedKernel:
    r"""Tabulate :math:`\tilde k(t) = e^{-\sigma t} k(t) - \sigma \int_t^T
    e^{-\sigma s} k(s) \,\mathrm{d}s` at the cell midpoints.

    For a tabulated (piecewise constant) input the equivalent form

    .. math::

        \tilde k_m = e^{-\sigma T} k_m + \sum_{j > m} (k_m - k_j)
            (e^{-\sigma t_j} - e^{-\sigma t_{j+1}})

    is used; every term is non-negative for a non-increasing kernel, so
    positivity and monotonicity survive round-off.
    """
    if not (math.isfinite(sigma) and sigma >= 0.0):
        raise ParameterError(f"shift rate must be non-negative: {sigma}")
    if sigma == 0.0:
        return kernel.tabulate(grid)

    if isinstance(kernel, FractionalPowerKernel):
        values = _shifted_power(kernel.beta, sigma, grid.T, grid.midpoints)
        return TabulatedKernel(values, declared_monotone=True)

    k = kernel.midpoint_values(grid)
    t = grid.nodes
    cell = np.exp(-sigma * t[:-1]) - np.exp(-sigma * t[1:])
    # S1[m] = sum_{j>m} cell_j, S2[m] = sum_{j>m} k_j cell_j
    S1 = np.concatenate([np.cumsum(cell[::-1])[::-1][1:], [0.0]])
    S2 = np.concatenate([np.cumsum((k * cell)[::-1])[::-1][1:], [0.0]])
    values = math.exp(-sigma * grid.T) * k + k * S1 - S2
    return TabulatedKernel(values, declared_monotone=True)


def shift_coefficient(kernel: Kernel, sigma: float, grid: TimeGrid) -> float:
    r"""Return :math:`\sigma \int_0^T e^{-\sigma s} k(s) \,\mathrm{d}s`."""
    if sigma == 0.0:
        return 0.0
    if isinstance(kernel, FractionalPowerKernel):
        return float(sigma**kernel.beta * special.gammainc(1.0 - kernel.beta, sigma * grid.T))
    k = kernel.midpoint_values(grid)
    t = grid.nodes
    return float(np.sum(k * (np.exp(-sigma * t[:-1]) - np.exp(-sigma * t[1:]))))


def shift_tail_integral(kernel: Kernel, sigma: float, grid: TimeGrid) -> np.ndarray:
    r"""Return :math:`\int_{t_n}^T e^{-\sigma s} k(s) \,\mathrm{d}s` at every node."""
    t = grid.nodes
    if isinstance(kernel, FractionalPowerKernel):
        a = 1.0 - kernel.beta
        if sigma == 0.0:
            return (grid.T**a - t**a) / math.gamma(a + 1.0)
        return sigma ** (kernel.beta - 1.0) * (
            special.gammaincc(a, sigma * t) - special.gammaincc(a, sigma * grid.T)
        )
    k = kernel.midpoint_values(grid)
    if sigma == 0.0:
        cell = k * grid.tau
    else:
        cell = k * (np.exp(-sigma * t[:-1]) - np.exp(-sigma * t[1:])) / sigma
    return np.concatenate([np.cumsum(cell[::-1])[::-1], [0.0]])


# }}}
