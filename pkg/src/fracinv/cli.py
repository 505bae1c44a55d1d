"""Command-line runner.

::

    fracinv --config run.ini --out results direct
    fracinv --config run.ini --out results invert
    fracinv --config run.ini --out results audit
    fracinv --out results ml 0.5 -1.0
    fracinv --config run.ini --out results convergence
    fracinv --config run.ini --out results --check direct

Exit codes: 0 success, 2 invalid input, 3 solver failure or no convergence,
4 ill-posed inverse problem, 5 drift detected by ``--check``.
"""

from __future__ import annotations

import argparse
import math
import sys
import tempfile
import warnings
from pathlib import Path
from typing import Callable

import numpy as np

from fracinv import __version__
from fracinv.conditions import (
    audit_general,
    audit_weighted,
    audit_monotone,
    CONDITION_SETS,
    closed_form_conditions,
)
from fracinv.config import RunConfig, Setup, load_config, materialize, spatial_field
from fracinv.domain import BoundaryCondition, EllipticOperator, SpaceGrid, SpatialField
from fracinv.errors import ConfigError, DriftError, FracInvError
from fracinv.forward import DirectProblem, Trajectory, solve_l1, solve_picard
from fracinv.fracops import TimeGrid, TimeSeries, relaxation_l1
from fracinv.inverse import (
    InverseProblemSpec,
    Weighted,
    apply_measure,
    reconstruct_final_time,
    reconstruct_weighted,
)
from fracinv.mittag_leffler import mittag_leffler, mittag_leffler_details
from fracinv.output import RunRecorder, compare_outputs, svg_heatmap, svg_lines
from fracinv.positivity import audit_positivity
from fracinv.reactions import Fisher, LinearPotential, TabulatedSource, Zeldovich

__all__ = ["main"]

DEFAULT_OUT = "fracinv-out"


# {{{ helpers


def _problem(setup: Setup) -> DirectProblem:
    return DirectProblem(setup.op, setup.bc, setup.reaction, setup.u0, setup.kernel)


def _solve(setup: Setup, reaction=None):
    cfg = setup.config
    problem = _problem(setup)
    if reaction is not None:
        problem = problem.with_reaction(reaction)
    tol = cfg.number("solver", "tol", 1e-9)
    if cfg.flag("solver", "picard", False):
        return solve_picard(
            problem,
            rho=cfg.number("solver", "rho", 0.5),
            max_iters=cfg.integer("solver", "picard_max_iters", 100),
            tol=tol,
        )
    return solve_l1(
        problem.op,
        problem.bc,
        problem.reaction,
        problem.u0,
        problem.kernel,
        tol=tol,
        max_newton=cfg.integer("solver", "max_newton", 50),
        corrected=setup.corrected,
    )


def _coord_columns(grid: SpaceGrid) -> list[str]:
    return ["x", "y"][: grid.dim]


def _field_rows(grid: SpaceGrid, *fields: np.ndarray):
    return [(*c, *(f[i] for f in fields)) for i, c in enumerate(grid.coords)]


def _write_trajectory(rec: RunRecorder, name: str, traj: Trajectory) -> None:
    grid = traj.space_grid
    rows = [
        (t, *grid.coords[i], traj.values[n, i])
        for n, t in enumerate(traj.time_grid.nodes)
        for i in range(grid.n_nodes)
    ]
    rec.csv(name, ["t", *_coord_columns(grid), "u"], rows, ["solution u(t, x) at every node"])


def _plots(setup: Setup) -> bool:
    return setup.config.flag("output", "emit_plots", False)


# }}}


# {{{ commands


def cmd_direct(setup: Setup, rec: RunRecorder, args) -> tuple[int, str]:
    traj, report = _solve(setup)
    _write_trajectory(rec, "trajectory.csv", traj)
    rec.text("solve_report.txt", report.to_text())
    pos = audit_positivity(traj, setup.reaction, setup.kernel, setup.bc)
    rec.text("positivity_report.txt", pos.to_text())
    rec.csv(
        "positivity_witnesses.csv",
        ["check", "time_index", "node", "u"],
        pos.witness_rows(),
        ["nodes where a positivity assertion failed"],
    )
    if _plots(setup):
        svg_heatmap(rec.path("trajectory.svg"), traj.values, "u(t, x)")
        if setup.space_grid.dim == 1:
            svg_lines(rec.path("final_slice.svg"), [(setup.space_grid.axes[0], traj.values[-1], "u(T, x)")], "final slice")
    summary = f"direct: {report.method} min_u={float(traj.values.min()):.6e} nonnegativity={pos.assertion_i}"
    print(summary)
    return 0, summary


def _inverse_spec(setup: Setup, args) -> tuple[InverseProblemSpec, SpatialField | None, dict]:
    cfg, grid = setup.config, setup.space_grid
    I = "inverse"
    opts = {
        "max_iters": cfg.integer(I, "max_iters", 50),
        "tol": cfg.number(I, "tol", 1e-8),
        "relaxation": cfg.number(I, "relaxation", 0.0),
        "floor_scale": cfg.number(I, "floor_scale", 1e-10),
        "noise": cfg.number(I, "noise", 0.0),
        "kappa": cfg.choice(I, "kappa", ("discrete", "continuous"), "discrete"),
        "pin": cfg.flag(I, "pin", False),
    }
    if opts["noise"] < 0.0:
        raise ConfigError("inverse.noise", "must be non-negative")
    z_init = spatial_field(cfg, I, "z_init", grid, "0")
    z_true = spatial_field(cfg, I, "z_true", grid) if cfg.has(I, "z_true") else None
    data = None
    if z_true is None:
        if not cfg.has(I, "data"):
            raise ConfigError("inverse.data", "no data table given and no z_true for twin mode")
        data = spatial_field(cfg, I, "data", grid)
    placeholder = data if data is not None else SpatialField.constant(grid, 0.0)
    try:
        spec = InverseProblemSpec(
            _problem(setup),
            setup.measure,
            placeholder,
            z_init=z_init,
            tol=opts["tol"],
            max_iters=opts["max_iters"],
            relaxation=opts["relaxation"],
            solver_tol=min(cfg.number("solver", "tol", 1e-9), 1e-11),
            floor_scale=opts["floor_scale"],
        )
    except FracInvError as exc:
        raise ConfigError("inverse", str(exc)) from None
    if z_true is not None:
        spec = spec.with_data(apply_measure(spec.forward(z_true), setup.measure))
    if opts["noise"] > 0.0:
        rng = np.random.default_rng(args.seed)
        d = spec.data.values
        spec = spec.with_data(d * (1.0 + opts["noise"] * rng.standard_normal(d.shape)))
    return spec, z_true, opts


def cmd_invert(setup: Setup, rec: RunRecorder, args) -> tuple[int, str]:
    spec, z_true, opts = _inverse_spec(setup, args)
    grid = setup.space_grid
    inner = grid.interior
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        if isinstance(setup.measure, Weighted):
            z, rep = reconstruct_weighted(spec, kappa=opts["kappa"])
        else:
            z, rep = reconstruct_final_time(spec, pin=opts["pin"])
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)

    cols = [*_coord_columns(grid), "z"]
    fields = [z.values]
    lines = [rep.to_text()]
    if z_true is not None:
        err = np.abs(z.values - z_true.values)
        scale = max(float(np.max(np.abs(z_true.values[inner]))), 1e-300)
        rel = float(err[inner].max()) / scale
        cols += ["z_true", "abs_error"]
        fields += [z_true.values, err]
        lines.append(f"relative_error = {rel:.6e}\n")
        lines.append(f"noise_level = {opts['noise']:.6e}\n")
    rec.csv("z.csv", cols, _field_rows(grid, *fields), ["reconstructed coefficient; boundary values copied from neighbours"])
    rec.csv(
        "residuals.csv",
        ["iteration", "data_residual", "z_update", "floor_activations"],
        [(k, r, u, f) for k, (r, u, f) in enumerate(zip(rep.residuals, rep.updates, rep.floor_activations))],
        ["per-iteration history of the fixed-point map"],
    )
    rec.text("reconstruction_report.txt", "".join(lines))

    r = setup.reaction.with_z(z)
    if isinstance(setup.measure, Weighted):
        audit = audit_weighted(rep.trajectory, r, z, setup.beta, setup.measure.varkappa)
    else:
        audit = audit_general(rep.trajectory, r, z, setup.beta)
    rec.text("conditions_report.txt", audit.to_text())
    if _plots(setup) and grid.dim == 1:
        series = [(grid.axes[0], z.values, "z")]
        if z_true is not None:
            series.append((grid.axes[0], z_true.values, "z_true"))
        svg_lines(rec.path("z.svg"), series, "reconstructed coefficient")

    summary = f"invert: {rep.method} iterations={rep.iterations} converged={str(rep.converged).lower()}"
    if z_true is not None:
        summary += f" relative_error={rel:.3e}"
    print(summary)
    if not rep.converged and opts["noise"] == 0.0:
        print(f"error: no convergence within {spec.max_iters} iterations", file=sys.stderr)
        return 3, summary
    return 0, summary


_CASE = {LinearPotential: 1, Fisher: 2, Zeldovich: 3}


def cmd_audit(setup: Setup, rec: RunRecorder, args) -> tuple[int, str]:
    traj, _ = _solve(setup)
    r, beta, tg = setup.reaction, setup.beta, setup.time_grid
    pos = audit_positivity(traj, r, setup.kernel, setup.bc)
    rec.text("positivity_report.txt", pos.to_text())

    weight = setup.measure.varkappa if isinstance(setup.measure, Weighted) else TimeSeries(tg, np.ones(tg.n_steps + 1))
    reports = {
        "general": audit_general(traj, r, None, beta),
        "weighted": audit_weighted(traj, r, None, beta, weight),
        "monotone": audit_monotone(traj, r, None, beta, op=setup.op, bc=setup.bc),
    }
    cols = ["id", "kind", "status", "margin", "w", "t", "node"]
    for name, rep in reports.items():
        rec.text(f"conditions_{name}.txt", rep.to_text())
        rec.csv(f"conditions_{name}.csv", cols, rep.csv_rows(), [f"{name} hypothesis audit"])

    case = _CASE.get(type(r))
    W = getattr(r, "W", 1.0)
    u_max = float(traj.values.max())
    lines = []
    for c in (1, 2, 3):
        for thm in (4, 3):
            audit = None
            if c == case:
                audit = reports["weighted"] if thm == 4 else reports["general"]
            cf = closed_form_conditions(c, beta, tg.T, W, r.z, u_max, thm, audit=audit)
            margin = min(e.margin for e in cf.entries)
            line = f"case {c} / {CONDITION_SETS[thm]}: {'PASS' if cf.passed else 'FAIL'} margin={margin:.6e}"
            if audit is not None:
                line += f" audit={'PASS' if audit.passed else 'FAIL'} implication={'ok' if cf.implication_holds else 'VIOLATED'}"
            lines.append(line)
    if not np.allclose(weight.values, weight.values[0]):
        lines.append("note: the weighted closed forms assume a constant weight")
    body = "\n".join(lines) + "\n"
    rec.text("closed_forms.txt", body)

    theta = reports["general"].theta
    print("theta = " + ("undefined" if theta == -math.inf else f"{theta:.6e}"))
    print(body, end="")
    summary = "audit: " + " ".join(f"{k}={'pass' if v.passed else 'fail'}" for k, v in reports.items())
    print(summary)
    return 0, summary


def cmd_ml(setup: Setup | None, rec: RunRecorder, args) -> tuple[int, str]:
    res = mittag_leffler_details(args.alpha, args.z)
    body = f"alpha = {args.alpha!r}\nz = {args.z!r}\nvalue = {res.value!r}\nmethod = {res.method}\nterms = {res.terms}\n"
    rec.text("ml.txt", body)
    print(f"{res.value!r}")
    print(f"terms = {res.terms} ({res.method})")
    return 0, f"ml: E_{args.alpha}({args.z}) = {res.value!r}"


def _manufactured_error(setup: Setup, kind: str, level: int) -> tuple[float, float]:
    cfg = setup.config
    beta, T = setup.beta, setup.time_grid.T
    diffusion = cfg.number("problem", "diffusion", 1.0)
    if np.any(setup.op.drift):
        raise ConfigError("problem.drift", "manufactured studies need zero drift")
    if kind == "temporal":
        tg, grid = TimeGrid(T, level), setup.space_grid
        step = tg.tau
    else:
        tg = setup.time_grid
        grid = SpaceGrid(setup.space_grid.extents, (level,) * setup.space_grid.dim)
        step = max(grid.spacing)
    phi = np.ones(grid.n_nodes)
    for d, L in enumerate(grid.extents):
        phi *= np.sin(np.pi * grid.coords[:, d] / L)
    t = tg.nodes
    if kind == "temporal":
        # discrete eigenvalue: no spatial error at all
        lam = sum(4.0 / h**2 * np.sin(np.pi * h / (2 * L)) ** 2 for h, L in zip(grid.spacing, grid.extents))
        e, De = t**2, 2.0 * t ** (2.0 - beta) / math.gamma(3.0 - beta)
    else:
        # linear in time: the L1 quadrature is exact
        lam = sum((np.pi / L) ** 2 for L in grid.extents)
        e, De = t, t ** (1.0 - beta) / math.gamma(2.0 - beta)
    z = spatial_field(cfg, "reaction", "z", grid, "0").values
    B = (De + diffusion * lam * e)[:, None] * phi - z * e[:, None] * phi
    reaction = LinearPotential(SpatialField(grid, z), source=TabulatedSource(tg, B))
    op = EllipticOperator.laplacian(grid, diffusion)
    bc = BoundaryCondition.dirichlet(grid, tg, 0.0)
    traj, _ = solve_l1(op, bc, reaction, np.zeros(grid.n_nodes), setup.kernel, tol=1e-13, corrected=setup.corrected)
    return step, float(np.max(np.abs(traj.values - e[:, None] * phi)))


def _relaxation_error(setup: Setup, level: int) -> tuple[float, float]:
    lam = setup.config.number("convergence", "lam", 1.0)
    tg = TimeGrid(setup.time_grid.T, level)
    u = relaxation_l1(lam, setup.beta, tg, corrected=setup.corrected).values
    exact = np.array([mittag_leffler(setup.beta, -lam * t**setup.beta) for t in tg.nodes])
    return tg.tau, float(np.max(np.abs(u - exact)))


def cmd_convergence(setup: Setup, rec: RunRecorder, args) -> tuple[int, str]:
    cfg = setup.config
    C = "convergence"
    study = cfg.choice(C, "study", ("manufactured", "relaxation"), "manufactured")
    kind = cfg.choice(C, "kind", ("temporal", "spatial"), "temporal")
    text = cfg.get(C, "levels", "16 32 64 128")
    try:
        levels = [int(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise ConfigError("convergence.levels", f"expected integers, got {text!r}") from None
    if len(levels) < 3:
        raise ConfigError("convergence.levels", f"need at least 3 levels, got {len(levels)}")
    if any(b <= a for a, b in zip(levels, levels[1:])) or levels[0] < 2:
        raise ConfigError("convergence.levels", "levels must increase and start at 2 or more")
    if study == "relaxation" and kind != "temporal":
        raise ConfigError("convergence.kind", "relaxation studies are temporal")

    steps, errors = [], []
    for lv in levels:
        s, e = _relaxation_error(setup, lv) if study == "relaxation" else _manufactured_error(setup, kind, lv)
        steps.append(s)
        errors.append(e)
    steps, errors = np.array(steps), np.array(errors)
    observed = [math.nan] + [
        math.log(errors[k - 1] / errors[k]) / math.log(steps[k - 1] / steps[k]) for k in range(1, len(levels))
    ]
    slope = float(np.polyfit(np.log(steps), np.log(errors), 1)[0])
    rec.csv(
        "convergence.csv",
        ["level", "step", "error", "observed_order"],
        list(zip(levels, steps, errors, observed)),
        [f"{study} {kind} study, beta = {setup.beta!r}", f"fitted_order = {slope!r}"],
    )
    rec.text(
        "convergence_report.txt",
        f"study = {study}\nkind = {kind}\nbeta = {setup.beta!r}\nfitted_order = {slope:.6f}\n",
    )
    if _plots(setup):
        svg_lines(rec.path("convergence.svg"), [(steps, errors, "error")], f"{study} {kind}", logx=True, logy=True)
    summary = f"convergence: {study} {kind} fitted_order={slope:.4f}"
    print(summary)
    return 0, summary


COMMANDS: dict[str, Callable] = {
    "direct": cmd_direct,
    "invert": cmd_invert,
    "audit": cmd_audit,
    "ml": cmd_ml,
    "convergence": cmd_convergence,
}


# }}}


# {{{ entry point


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--config", default=d(None), help="run configuration (INI)")
    p.add_argument("--out", default=d(DEFAULT_OUT), help="output directory")
    p.add_argument("--check", action="store_true", default=d(False), help="compare against stored outputs instead of writing")
    p.add_argument("--seed", type=int, default=d(0), help="seed for noise generation")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fracinv", description="Time-fractional reaction-diffusion toolkit.")
    parser.add_argument("--version", action="version", version=f"fracinv {__version__}")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("direct", "solve the direct problem"),
        ("invert", "reconstruct z from data"),
        ("audit", "audit positivity and uniqueness hypotheses"),
        ("convergence", "refinement study with fitted orders"),
    ):
        _global_flags(sub.add_parser(name, help=help_), suppress=True)
    ml = sub.add_parser("ml", help="evaluate the Mittag-Leffler function")
    ml.add_argument("alpha", type=float)
    ml.add_argument("z", type=float)
    _global_flags(ml, suppress=True)
    return parser


def _run(args, out: Path) -> tuple[int, str | None]:
    cfg: RunConfig | None = None
    setup = None
    if args.command != "ml":
        if args.config is None:
            raise ConfigError("--config", f"the {args.command} command needs a configuration file")
        cfg = load_config(args.config)
        setup = materialize(cfg)
    elif args.config is not None:
        cfg = load_config(args.config)
    rec = RunRecorder(out, args.command, cfg.sha256 if cfg else None, __version__)
    code, summary = COMMANDS[args.command](setup, rec, args)
    rec.finish(summary)
    return code, summary


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    try:
        if not args.check:
            code, _ = _run(args, out)
            return code
        with tempfile.TemporaryDirectory(prefix="fracinv-check-") as tmp:
            code, _ = _run(args, Path(tmp))
            problems = compare_outputs(Path(tmp), out)
        if problems:
            for p in problems:
                print(f"drift: {p}", file=sys.stderr)
            raise DriftError(f"{len(problems)} output(s) drifted from {out}")
        print(f"check: outputs match {out}")
        return code
    except FracInvError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


# }}}


if __name__ == "__main__":
    sys.exit(main())
