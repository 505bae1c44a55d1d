r"""Nonlinearities :math:`f(w, t, x) = a(w, t, x) z(x) + b(w, t, x)`.

Evaluators take ``(w, t, nodes)`` where ``nodes`` is an index array into the
space grid (``None`` meaning every node) and ``w`` broadcasts against it, so
a whole lattice of ``w`` values can be evaluated at once.

User callables (sources and custom reactions) receive node coordinates
unpacked, i.e. ``fn(t, x)`` in 1D and ``fn(t, x, y)`` in 2D; custom
reaction pieces additionally take ``w`` first.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from fracinv.domain import SpaceGrid, SpatialField
from fracinv.errors import DataError, ParameterError
from fracinv.fracops import TimeGrid

__all__ = [
    "Custom",
    "Fisher",
    "FunctionSource",
    "LinearPotential",
    "Partials",
    "Reaction",
    "Source",
    "SourceOnly",
    "TabulatedSource",
    "Zeldovich",
    "ZeroSource",
    "eval_f",
    "eval_partials",
    "lipschitz_bound",
    "negative_slope_bound",
]

LATTICE_POINTS = 201
#: fitted slopes above this value are treated as unbounded
SLOPE_CAP = 1.0e6


@dataclass(frozen=True)
class Partials:
    a: np.ndarray
    a_w: np.ndarray
    a_t: np.ndarray
    a_ww: np.ndarray
    a_wt: np.ndarray
    b: np.ndarray
    b_w: np.ndarray
    b_t: np.ndarray
    b_ww: np.ndarray
    b_wt: np.ndarray


# {{{ sources b(t, x)


class Source:
    """Space-time source :math:`b(t, x)` independent of :math:`w`."""

    def value(self, t: float, grid: SpaceGrid, nodes: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def dt(self, t: float, grid: SpaceGrid, nodes: np.ndarray) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class ZeroSource(Source):
    def value(self, t, grid, nodes):
        return np.zeros(len(nodes))

    def dt(self, t, grid, nodes):
        return np.zeros(len(nodes))


@dataclass(frozen=True)
class FunctionSource(Source):
    """Source given as ``fn(t, *coords)``.

    Without ``fn_t`` the time derivative is a central difference with step
    ``dt_step``.
    """

    fn: Callable[..., np.ndarray]
    fn_t: Callable[..., np.ndarray] | None = None
    dt_step: float = 1.0e-6

    def _eval(self, fn, t, grid, nodes):
        out = fn(t, *grid.coords[nodes].T)
        return np.broadcast_to(np.asarray(out, dtype=np.float64), (len(nodes),))

    def value(self, t, grid, nodes):
        return self._eval(self.fn, t, grid, nodes)

    def dt(self, t, grid, nodes):
        if self.fn_t is not None:
            return self._eval(self.fn_t, t, grid, nodes)
        h = self.dt_step
        return (self._eval(self.fn, t + h, grid, nodes) - self._eval(self.fn, t - h, grid, nodes)) / (2 * h)


@dataclass(frozen=True)
class TabulatedSource(Source):
    """Source tabulated on ``(time node, space node)``, linear in time."""

    time_grid: TimeGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != self.time_grid.n_steps + 1:
            raise DataError(f"source table has shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DataError("source table must be finite")
        object.__setattr__(self, "values", values)

    def _locate(self, t: float) -> tuple[int, float]:
        s = np.clip(t / self.time_grid.tau, 0.0, self.time_grid.n_steps)
        n = min(int(s), self.time_grid.n_steps - 1)
        return n, s - n

    def value(self, t, grid, nodes):
        n, th = self._locate(t)
        return (1.0 - th) * self.values[n, nodes] + th * self.values[n + 1, nodes]

    def dt(self, t, grid, nodes):
        n, _ = self._locate(t)
        return (self.values[n + 1, nodes] - self.values[n, nodes]) / self.time_grid.tau


def _as_source(b: Source | Callable | float | None) -> Source:
    if b is None:
        return ZeroSource()
    if isinstance(b, Source):
        return b
    if callable(b):
        return FunctionSource(b)
    value = float(b)
    if value == 0.0:
        return ZeroSource()
    return FunctionSource(lambda t, *x: np.full(np.shape(x[0]), value), lambda t, *x: 0.0 * x[0])


# }}}


# {{{ reactions


def _nodes(grid: SpaceGrid, nodes) -> np.ndarray:
    if nodes is None:
        return np.arange(grid.n_nodes)
    return np.atleast_1d(np.asarray(nodes, dtype=np.intp))


@dataclass(frozen=True)
class Reaction:
    """Base class; subclasses define :meth:`a_parts` and :meth:`b_parts`."""

    z: SpatialField

    @property
    def grid(self) -> SpaceGrid:
        return self.z.grid

    def with_z(self, z: SpatialField | np.ndarray) -> Reaction:
        if not isinstance(z, SpatialField):
            z = SpatialField(self.grid, z)
        return dataclasses.replace(self, z=z)

    #: a(w) depends on w only (true for the named variants)
    a_depends_on_tx = False

    def a_parts(self, w, t, nodes):
        raise NotImplementedError

    def b_parts(self, w, t, nodes):
        raise NotImplementedError

    def f(self, w, t: float, nodes=None) -> np.ndarray:
        nodes = _nodes(self.grid, nodes)
        a = self.a_parts(w, t, nodes)
        b = self.b_parts(w, t, nodes)
        return a[0] * self.z.values[nodes] + b[0]

    def f_w(self, w, t: float, nodes=None) -> np.ndarray:
        nodes = _nodes(self.grid, nodes)
        a = self.a_parts(w, t, nodes)
        b = self.b_parts(w, t, nodes)
        return a[1] * self.z.values[nodes] + b[1]

    def a(self, w, t: float, nodes=None) -> np.ndarray:
        return self.a_parts(w, t, _nodes(self.grid, nodes))[0]

    def b(self, w, t: float, nodes=None) -> np.ndarray:
        return self.b_parts(w, t, _nodes(self.grid, nodes))[0]


def _zeros_like(w, nodes) -> np.ndarray:
    return np.zeros(np.broadcast_shapes(np.shape(w), (len(nodes),)))


@dataclass(frozen=True)
class _Named(Reaction):
    source: Source = dataclasses.field(default_factory=ZeroSource)

    def __post_init__(self) -> None:
        object.__setattr__(self, "source", _as_source(self.source))

    def b_parts(self, w, t, nodes):
        zero = _zeros_like(w, nodes)
        b = zero + self.source.value(t, self.grid, nodes)
        bt = zero + self.source.dt(t, self.grid, nodes)
        return b, zero, bt, zero, zero


@dataclass(frozen=True)
class SourceOnly(_Named):
    """:math:`a \\equiv 0`; the coefficient :math:`z` has no effect."""

    def a_parts(self, w, t, nodes):
        zero = _zeros_like(w, nodes)
        return zero, zero, zero, zero, zero


@dataclass(frozen=True)
class LinearPotential(_Named):
    """:math:`a(w) = w`."""

    def a_parts(self, w, t, nodes):
        w = np.asarray(w, dtype=np.float64)
        zero = _zeros_like(w, nodes)
        return w + zero, 1.0 + zero, zero, zero, zero


@dataclass(frozen=True)
class Fisher(_Named):
    """:math:`a(w) = w (1 - w / W)`."""

    W: float = 1.0

    def __post_init__(self) -> None:
        super().__post_init__()
        if not (math.isfinite(self.W) and self.W > 0):
            raise ParameterError(f"carrying capacity must be positive: W = {self.W}")

    def a_parts(self, w, t, nodes):
        w = np.asarray(w, dtype=np.float64)
        zero = _zeros_like(w, nodes)
        W = self.W
        return w * (1.0 - w / W) + zero, 1.0 - 2.0 * w / W + zero, zero, -2.0 / W + zero, zero


@dataclass(frozen=True)
class Zeldovich(_Named):
    """:math:`a(w) = w^2 (1 - w / W)`."""

    W: float = 1.0

    def __post_init__(self) -> None:
        super().__post_init__()
        if not (math.isfinite(self.W) and self.W > 0):
            raise ParameterError(f"carrying capacity must be positive: W = {self.W}")

    def a_parts(self, w, t, nodes):
        w = np.asarray(w, dtype=np.float64)
        zero = _zeros_like(w, nodes)
        W = self.W
        return (
            w * w * (1.0 - w / W) + zero,
            2.0 * w - 3.0 * w * w / W + zero,
            zero,
            2.0 - 6.0 * w / W + zero,
            zero,
        )


_CUSTOM_NAMES = ("a", "a_w", "a_t", "a_ww", "a_wt", "b", "b_w", "b_t", "b_ww", "b_wt")


@dataclass(frozen=True)
class Custom(Reaction):
    """User-supplied pieces ``fn(w, t, *coords)``.

    All ten callables are required; partial derivatives are never inferred.
    Callables must be re-entrant.
    """

    fns: dict[str, Callable[..., np.ndarray]] = dataclasses.field(default_factory=dict)

    a_depends_on_tx = True

    def __post_init__(self) -> None:
        missing = [k for k in _CUSTOM_NAMES if k not in self.fns]
        if missing:
            raise ParameterError(f"custom reaction is missing {', '.join(missing)}")

    def _call(self, name, w, t, nodes):
        coords = self.grid.coords[nodes].T
        out = np.asarray(self.fns[name](w, t, *coords), dtype=np.float64)
        out = out + _zeros_like(w, nodes)
        if not np.all(np.isfinite(out)):
            bad = np.unravel_index(int(np.flatnonzero(~np.isfinite(out))[0]), out.shape)
            node = int(nodes[bad[-1]])
            raise DataError(
                f"custom {name} is not finite at t = {t:.6g}, {self.grid.describe_node(node)}"
            )
        return out

    def a_parts(self, w, t, nodes):
        return tuple(self._call(k, w, t, nodes) for k in _CUSTOM_NAMES[:5])

    def b_parts(self, w, t, nodes):
        return tuple(self._call(k, w, t, nodes) for k in _CUSTOM_NAMES[5:])


# }}}


# {{{ operations


def eval_f(r: Reaction, w, t: float, x=None) -> np.ndarray:
    """Evaluate :math:`a(w, t, x) z(x) + b(w, t, x)` at node(s) ``x``."""
    out = r.f(w, t, x)
    if not np.all(np.isfinite(out)):
        raise DataError(f"reaction is not finite at t = {t:.6g}")
    return out


def eval_partials(r: Reaction, w, t: float, x=None) -> Partials:
    nodes = _nodes(r.grid, x)
    a = r.a_parts(w, t, nodes)
    b = r.b_parts(w, t, nodes)
    return Partials(*(np.asarray(v) for v in (*a, *b)))


def _time_samples(time_grid: TimeGrid, max_samples: int = LATTICE_POINTS) -> np.ndarray:
    t = time_grid.nodes
    if t.size <= max_samples:
        return t
    return t[np.unique(np.linspace(0, t.size - 1, max_samples).round().astype(int))]


def lipschitz_bound(
    r: Reaction,
    w_range: tuple[float, float],
    rho: float,
    time_grid: TimeGrid,
) -> float:
    r"""Lattice estimate of :math:`\sup |f_w|` over
    :math:`[w_{min} - \rho, w_{max} + \rho] \times [0, T] \times \Omega`."""
    if not rho >= 0.0:
        raise ParameterError(f"radius must be non-negative: {rho}")
    lo, hi = float(min(w_range)) - rho, float(max(w_range)) + rho
    w = np.linspace(lo, hi, LATTICE_POINTS)[:, None]
    K = 0.0
    for t in _time_samples(time_grid):
        K = max(K, float(np.max(np.abs(r.f_w(w, float(t))))))
    return K


def negative_slope_bound(
    r: Reaction,
    eta: float,
    time_grid: TimeGrid,
    nodes: np.ndarray | None = None,
) -> tuple[float, tuple[float, float, int] | None]:
    r"""Smallest :math:`M \ge 0` with :math:`f(w, t, x) \ge -M |w|` on the
    sampled lattice :math:`w \in (-\eta, 0)`.

    The lattice is uniform plus a geometric cluster toward ``w = 0`` so that a
    negative :math:`f(0, t, x)` or a sub-linear decay shows up as a slope
    above :data:`SLOPE_CAP`, in which case ``inf`` is returned. The second
    return value is the witness ``(w, t, node)`` of the largest slope.
    """
    if not eta > 0.0:
        raise ParameterError(f"eta must be positive: {eta}")
    nodes = _nodes(r.grid, nodes)
    uniform = -eta * np.arange(1, LATTICE_POINTS + 1) / LATTICE_POINTS
    cluster = -eta * 10.0 ** -np.arange(1.0, 13.0)
    w = np.concatenate([uniform, cluster])[:, None]

    M, witness = 0.0, None
    for t in time_grid.nodes:
        slope = -r.f(w, float(t), nodes) / np.abs(w)
        k = int(np.argmax(slope))
        if slope.flat[k] > M:
            i, j = np.unravel_index(k, slope.shape)
            M, witness = float(slope[i, j]), (float(w[i, 0]), float(t), int(nodes[j]))
    if not M <= SLOPE_CAP:
        return math.inf, witness
    return M, witness


# }}}
