"""Run configuration: an INI file with sections ``problem``, ``reaction``,
``measure``, ``solver``, ``inverse``, ``output`` and ``convergence``.

Field values are numbers, ``constant:<v>``, ``expr:<expression>`` or a path
to a CSV table (relative to the config file). Expressions may use the
coordinates ``x``, ``y`` (and ``t`` where time-dependent), arithmetic,
comparisons and a fixed set of numpy functions; nothing else is evaluated.

Validation is total: :func:`materialize` builds every object a command
needs, and any failure is reported as a :class:`ConfigError` naming the
offending key before a solver runs.
"""

from __future__ import annotations

import ast
import configparser
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from fracinv.domain import BoundaryCondition, EllipticOperator, SpaceGrid, SpatialField
from fracinv.errors import ConfigError, FracInvError
from fracinv.fracops import FractionalPowerKernel, TimeGrid, TimeSeries
from fracinv.inverse import DiracAt, Weighted
from fracinv.reactions import (
    Fisher,
    FunctionSource,
    LinearPotential,
    Reaction,
    SourceOnly,
    Zeldovich,
)

__all__ = ["RunConfig", "Setup", "compile_expression", "load_config", "materialize"]

SECTIONS = ("problem", "reaction", "measure", "solver", "inverse", "output", "convergence")

_FUNCS: dict[str, object] = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "tanh": np.tanh,
    "abs": np.abs,
    "where": np.where,
    "maximum": np.maximum,
    "minimum": np.minimum,
    "pi": np.pi,
}
_NODES = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Compare, ast.Call, ast.Name,
    ast.Constant, ast.Load, ast.operator, ast.unaryop, ast.cmpop,
)


def compile_expression(text: str, variables: tuple[str, ...], key: str) -> Callable[..., np.ndarray]:
    """Compile a restricted arithmetic expression into ``fn(*variables)``."""
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ConfigError(key, f"cannot parse expression {text!r}: {exc.msg}") from None
    allowed = set(_FUNCS) | set(variables)
    for node in ast.walk(tree):
        if not isinstance(node, _NODES):
            raise ConfigError(key, f"construct {type(node).__name__} is not allowed in expressions")
        if isinstance(node, ast.Name) and node.id not in allowed:
            raise ConfigError(key, f"unknown name {node.id!r}; allowed: {', '.join(sorted(allowed))}")
        if isinstance(node, ast.Call) and not isinstance(node.func, ast.Name):
            raise ConfigError(key, "only plain function calls are allowed")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ConfigError(key, f"only numeric constants are allowed, got {node.value!r}")
    code = compile(tree, f"<{key}>", "eval")

    def fn(*args):
        scope = dict(_FUNCS)
        scope.update(zip(variables, args))
        with np.errstate(all="ignore"):
            out = eval(code, {"__builtins__": {}}, scope)  # noqa: S307 - names checked above
        return np.asarray(out, dtype=np.float64)

    return fn


# {{{ raw config


def _floats(text: str, key: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise ConfigError(key, f"expected numbers, got {text!r}") from None


@dataclass(frozen=True)
class RunConfig:
    path: Path
    sha256: str
    raw: dict[str, dict[str, str]]

    def get(self, section: str, key: str, default: str | None = None) -> str:
        value = self.raw.get(section, {}).get(key)
        if value is None:
            if default is None:
                raise ConfigError(f"{section}.{key}", "missing required entry")
            return default
        return value

    def has(self, section: str, key: str) -> bool:
        return key in self.raw.get(section, {})

    def number(self, section: str, key: str, default: float | None = None) -> float:
        text = self.get(section, key, None if default is None else repr(default))
        try:
            value = float(text)
        except ValueError:
            raise ConfigError(f"{section}.{key}", f"expected a number, got {text!r}") from None
        if not math.isfinite(value):
            raise ConfigError(f"{section}.{key}", f"must be finite, got {text!r}")
        return value

    def integer(self, section: str, key: str, default: int | None = None) -> int:
        value = self.number(section, key, default)
        if value != int(value):
            raise ConfigError(f"{section}.{key}", f"expected an integer, got {value}")
        return int(value)

    def flag(self, section: str, key: str, default: bool = False) -> bool:
        text = self.get(section, key, "true" if default else "false").strip().lower()
        if text in ("1", "true", "yes", "on"):
            return True
        if text in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{section}.{key}", f"expected a boolean, got {text!r}")

    def choice(self, section: str, key: str, options: tuple[str, ...], default: str | None = None) -> str:
        text = self.get(section, key, default).strip().lower()
        if text not in options:
            raise ConfigError(f"{section}.{key}", f"expected one of {', '.join(options)}, got {text!r}")
        return text

    def resolve(self, text: str) -> Path:
        p = Path(text.strip())
        return p if p.is_absolute() else self.path.parent / p


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keep key case (W, T)
    try:
        parser.read_string(data.decode("utf-8"), source=str(path))
    except (configparser.Error, UnicodeDecodeError) as exc:
        raise ConfigError("config", f"cannot parse {path}: {exc}") from None
    unknown = [s for s in parser.sections() if s not in SECTIONS]
    if unknown:
        raise ConfigError(unknown[0], f"unknown section; expected one of {', '.join(SECTIONS)}")
    raw = {s: dict(parser.items(s)) for s in parser.sections()}
    return RunConfig(path, hashlib.sha256(data).hexdigest(), raw)


# }}}


# {{{ materialization


@dataclass(frozen=True)
class Setup:
    """Everything built from a validated config."""

    config: RunConfig
    time_grid: TimeGrid
    space_grid: SpaceGrid
    kernel: FractionalPowerKernel
    op: EllipticOperator
    bc: BoundaryCondition
    reaction: Reaction
    u0: SpatialField
    measure: DiracAt | Weighted
    corrected: bool

    @property
    def beta(self) -> float:
        return self.kernel.beta


def _coords(grid: SpaceGrid) -> tuple[np.ndarray, ...]:
    return tuple(grid.coords.T)


def _space_vars(grid: SpaceGrid) -> tuple[str, ...]:
    return ("x", "y")[: grid.dim]


def spatial_field(cfg: RunConfig, section: str, key: str, grid: SpaceGrid, default: str | None = None) -> SpatialField:
    where = f"{section}.{key}"
    text = cfg.get(section, key, default).strip()
    try:
        if text.startswith("constant:"):
            return SpatialField.constant(grid, float(text[9:]))
        if text.startswith("expr:"):
            fn = compile_expression(text[5:], _space_vars(grid), where)
            return SpatialField(grid, np.broadcast_to(fn(*_coords(grid)), (grid.n_nodes,)))
        try:
            return SpatialField.constant(grid, float(text))
        except ValueError:
            pass
        return _field_from_csv(cfg.resolve(text), grid, where)
    except ConfigError:
        raise
    except (FracInvError, ValueError) as exc:
        raise ConfigError(where, str(exc)) from None


def _read_table(path: Path) -> np.ndarray:
    """Comma separated numbers; ``#`` comments and one leading column-name
    row are skipped."""
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if lines:
        try:
            [float(v) for v in lines[0].split(",")]
        except ValueError:
            lines = lines[1:]
    return np.loadtxt(lines, delimiter=",", ndmin=2)


def _field_from_csv(path: Path, grid: SpaceGrid, where: str) -> SpatialField:
    if not path.is_file():
        raise ConfigError(where, f"table {path} does not exist")
    table = _read_table(path)
    if table.shape != (grid.n_nodes, grid.dim + 1):
        raise ConfigError(
            where, f"table {path.name} has shape {table.shape}, expected {(grid.n_nodes, grid.dim + 1)}"
        )
    tol = 1.0e-9 * max(grid.extents)
    off = np.abs(table[:, : grid.dim] - grid.coords).max(axis=1)
    bad = np.flatnonzero(off > tol)
    if bad.size:
        raise ConfigError(where, f"row {bad[0] + 1} of {path.name} does not match {grid.describe_node(int(bad[0]))}")
    return SpatialField(grid, table[:, -1])


def _time_series(cfg: RunConfig, section: str, key: str, grid: TimeGrid, default: str) -> TimeSeries:
    where = f"{section}.{key}"
    text = cfg.get(section, key, default).strip()
    try:
        if text.startswith("constant:"):
            return TimeSeries(grid, np.full(grid.n_steps + 1, float(text[9:])))
        if text.startswith("expr:"):
            fn = compile_expression(text[5:], ("t",), where)
            return TimeSeries(grid, np.broadcast_to(fn(grid.nodes), (grid.n_steps + 1,)).copy())
        try:
            return TimeSeries(grid, np.full(grid.n_steps + 1, float(text)))
        except ValueError:
            pass
        path = cfg.resolve(text)
        if not path.is_file():
            raise ConfigError(where, f"table {path} does not exist")
        table = _read_table(path)
        if table.shape != (grid.n_steps + 1, 2) or not np.allclose(table[:, 0], grid.nodes, atol=1e-9 * grid.T):
            raise ConfigError(where, f"table {path.name} must list (t, value) at every time node")
        return TimeSeries(grid, table[:, 1])
    except ConfigError:
        raise
    except (FracInvError, ValueError) as exc:
        raise ConfigError(where, str(exc)) from None


def _space_time_fn(cfg: RunConfig, section: str, key: str, grid: SpaceGrid, default: str):
    """A number or an ``expr:`` in ``t`` and the coordinates."""
    where = f"{section}.{key}"
    text = cfg.get(section, key, default).strip()
    if text.startswith("expr:"):
        return compile_expression(text[5:], ("t", *_space_vars(grid)), where)
    if text.startswith("constant:"):
        text = text[9:]
    try:
        return float(text)
    except ValueError:
        return None


def materialize(cfg: RunConfig) -> Setup:
    P = "problem"
    beta = cfg.number(P, "beta")
    if not 0.0 < beta < 1.0:
        raise ConfigError("problem.beta", f"must lie in (0, 1), got {beta}")
    try:
        tg = TimeGrid(cfg.number(P, "T"), cfg.integer(P, "n_steps"))
    except FracInvError as exc:
        raise ConfigError("problem.T/n_steps", str(exc)) from None
    extents = _floats(cfg.get(P, "extents", "1.0"), "problem.extents")
    cells = _floats(cfg.get(P, "n_cells"), "problem.n_cells")
    if len(cells) == 1 and len(extents) == 2:
        cells = cells * 2
    try:
        grid = SpaceGrid(extents, tuple(int(c) for c in cells))
    except FracInvError as exc:
        raise ConfigError("problem.n_cells", str(exc)) from None

    diffusion = cfg.number(P, "diffusion", 1.0)
    drift = _floats(cfg.get(P, "drift", " ".join(["0"] * grid.dim)), "problem.drift")
    if len(drift) != grid.dim:
        raise ConfigError("problem.drift", f"need {grid.dim} components")
    op = EllipticOperator.constant(grid, diffusion * np.eye(grid.dim), np.array(drift))
    if diffusion < 0.0:
        raise ConfigError("problem.diffusion", "must be non-negative")

    case = cfg.choice(P, "bc", ("dirichlet", "oblique"), "dirichlet")
    g = _space_time_fn(cfg, P, "g", grid, "0")
    if g is None:
        path = cfg.resolve(cfg.get(P, "g"))
        if not path.is_file():
            raise ConfigError("problem.g", f"table {path} does not exist")
        g = _read_table(path)
    omega = None
    if case == "oblique":
        text = cfg.get(P, "omega", "normal").strip().lower()
        if text != "normal":
            omega = np.array(_floats(text, "problem.omega"))
            if omega.size != grid.dim:
                raise ConfigError("problem.omega", f"need {grid.dim} components")
    try:
        bc = BoundaryCondition(grid, tg, case, g, omega)
    except FracInvError as exc:
        raise ConfigError("problem.omega" if "omega" in str(exc) or "outward" in str(exc) else "problem.g", str(exc)) from None

    u0 = spatial_field(cfg, P, "u0", grid, "0")
    corrected = cfg.flag(P, "corrected", True)

    R = "reaction"
    variant = cfg.choice(R, "variant", ("linear", "fisher", "zeldovich", "none"), "linear")
    z = spatial_field(cfg, R, "z", grid, "0")
    b = _space_time_fn(cfg, R, "b", grid, "0")
    if b is None:
        raise ConfigError("reaction.b", "expected a number or expr:")
    if callable(b):
        b_t = _space_time_fn(cfg, R, "b_t", grid, "nan") if cfg.has(R, "b_t") else None
        if b_t is not None and not callable(b_t):
            value = float(b_t)
            b_t = lambda t, *x: np.full(np.shape(x[0]), value)  # noqa: E731
        source = FunctionSource(b, b_t)
    else:
        source = b
    W = cfg.number(R, "W", 1.0)
    try:
        if variant == "linear":
            reaction = LinearPotential(z, source=source)
        elif variant == "fisher":
            reaction = Fisher(z, source=source, W=W)
        elif variant == "zeldovich":
            reaction = Zeldovich(z, source=source, W=W)
        else:
            reaction = SourceOnly(z, source=source)
        reaction.f(np.zeros(grid.n_nodes), 0.0)
    except FracInvError as exc:
        raise ConfigError("reaction", str(exc)) from None

    M = "measure"
    kind = cfg.choice(M, "type", ("dirac", "weighted"), "dirac")
    try:
        if kind == "dirac":
            measure = DiracAt(cfg.number(M, "t_star", tg.T))
            measure.snap(tg)
        else:
            measure = Weighted(_time_series(cfg, M, "weight", tg, "constant:1"))
    except ConfigError:
        raise
    except FracInvError as exc:
        raise ConfigError(f"measure.{'t_star' if kind == 'dirac' else 'weight'}", str(exc)) from None

    # remaining scalar entries are checked here so that no command fails late
    for key, default in (("tol", 1e-9), ("rho", 0.5)):
        if cfg.number("solver", key, default) <= 0.0:
            raise ConfigError(f"solver.{key}", "must be positive")
    cfg.integer("solver", "max_newton", 50)
    cfg.flag("solver", "picard", False)
    cfg.flag("output", "emit_plots", False)

    return Setup(cfg, tg, grid, FractionalPowerKernel(beta), op, bc, reaction, u0, measure, corrected)


# }}}
