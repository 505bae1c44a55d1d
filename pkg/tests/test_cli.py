from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from fracinv.cli import main

BASE = """
[problem]
beta = 0.5
T = 1.0
n_steps = 24
extents = 1.0
n_cells = 12
bc = dirichlet
g = 0
u0 = 0
"""

FISHER = BASE + """
[reaction]
variant = fisher
W = 1.0
z = expr: 0.3 + 0.2*sin(pi*x)
b = expr: 2*t*sin(pi*x)
b_t = expr: 2*sin(pi*x)

[measure]
type = weighted
weight = constant:1
"""

TWIN = FISHER + """
[inverse]
z_true = expr: 0.3 + 0.2*sin(pi*x)
"""


def write(tmp_path: Path, body: str, name: str = "run.ini") -> str:
    p = tmp_path / name
    p.write_text(body)
    return str(p)


def run(*argv) -> int:
    return main([str(a) for a in argv])


def manifest(out: Path) -> dict:
    return json.loads((out / "manifest.json").read_text())


def test_direct_writes_outputs(tmp_path, capsys):
    out = tmp_path / "o"
    assert run("direct", "--config", write(tmp_path, FISHER), "--out", out) == 0
    m = manifest(out)
    assert m["command"] == "direct"
    assert {"trajectory.csv", "solve_report.txt", "positivity_report.txt"} <= set(m["outputs"])
    assert len(m["config_sha256"]) == 64
    rows = np.loadtxt(out / "trajectory.csv", delimiter=",", comments="#")
    assert rows.shape[0] == 25 * 13
    assert "nonnegativity: pass" in (out / "positivity_report.txt").read_text()


def test_global_flags_before_subcommand(tmp_path):
    out = tmp_path / "o"
    assert run("--config", write(tmp_path, FISHER), "--out", out, "direct") == 0
    assert (out / "manifest.json").is_file()


def test_invert_twin(tmp_path, capsys):
    out = tmp_path / "o"
    assert run("invert", "--config", write(tmp_path, TWIN), "--out", out) == 0
    report = (out / "reconstruction_report.txt").read_text()
    rel = float(report.split("relative_error = ")[1].split()[0])
    assert rel < 1e-6
    assert "converged = true" in report
    assert (out / "conditions_report.txt").read_text().startswith("theorem = weighted")


def test_invert_from_data_table(tmp_path):
    twin_out = tmp_path / "twin"
    run("direct", "--config", write(tmp_path, FISHER), "--out", twin_out)
    U = np.loadtxt(twin_out / "trajectory.csv", delimiter=",", comments="#")
    # columns: t, x, u; weighted data by the trapezoid rule
    t = np.unique(U[:, 0])
    x = np.unique(U[:, 1])
    u = U[:, 2].reshape(t.size, x.size)
    q = np.full(t.size, t[1] - t[0])
    q[[0, -1]] *= 0.5
    d = q @ u
    table = tmp_path / "d.csv"
    table.write_text("x,value\n" + "".join(f"{float(a)!r},{float(b)!r}\n" for a, b in zip(x, d)))
    cfg = write(tmp_path, FISHER + f"\n[inverse]\ndata = {table}\n", "data.ini")
    out = tmp_path / "o"
    assert run("invert", "--config", cfg, "--out", out) == 0
    z = np.loadtxt(out / "z.csv", delimiter=",", comments="#")
    zt = 0.3 + 0.2 * np.sin(np.pi * z[1:-1, 0])
    assert np.max(np.abs(z[1:-1, 1] - zt)) < 1e-6


def test_invert_without_data_is_a_config_error(tmp_path, capsys):
    assert run("invert", "--config", write(tmp_path, FISHER), "--out", tmp_path / "o") == 2
    assert "inverse.data" in capsys.readouterr().err


def test_invert_source_only_is_ill_posed(tmp_path):
    body = TWIN.replace("variant = fisher", "variant = none")
    assert run("invert", "--config", write(tmp_path, body), "--out", tmp_path / "o") == 4


def test_invert_not_converged_exits_3(tmp_path):
    body = TWIN + "max_iters = 2\n"
    assert run("invert", "--config", write(tmp_path, body), "--out", tmp_path / "o") == 3


def test_noise_uses_seed(tmp_path):
    body = TWIN + "noise = 0.01\n"
    cfg = write(tmp_path, body)
    run("invert", "--config", cfg, "--out", tmp_path / "a", "--seed", 1)
    run("invert", "--config", cfg, "--out", tmp_path / "b", "--seed", 1)
    run("invert", "--config", cfg, "--out", tmp_path / "c", "--seed", 2)
    za, zb, zc = (np.loadtxt(tmp_path / k / "z.csv", delimiter=",", comments="#") for k in "abc")
    assert np.array_equal(za, zb) and not np.array_equal(za, zc)


def test_audit_outputs(tmp_path, capsys):
    out = tmp_path / "o"
    assert run("audit", "--config", write(tmp_path, FISHER), "--out", out) == 0
    names = set(manifest(out)["outputs"])
    for k in ("general", "weighted", "monotone"):
        assert f"conditions_{k}.txt" in names and f"conditions_{k}.csv" in names
    closed = (out / "closed_forms.txt").read_text()
    assert "case 2 / general: FAIL" in closed
    assert "case 2 / weighted: PASS" in closed


def test_ml_command(tmp_path, capsys):
    out = tmp_path / "o"
    assert run("ml", "0.5", "-1", "--out", out) == 0
    assert "0.42758357615580" in (out / "ml.txt").read_text()


def test_ml_out_of_range_exits_2(tmp_path):
    assert run("ml", "1.5", "0", "--out", tmp_path / "o") == 2


@pytest.mark.parametrize(
    "section",
    [
        "[convergence]\nstudy = manufactured\nkind = temporal\nlevels = 8 16 32\n",
        "[convergence]\nstudy = manufactured\nkind = spatial\nlevels = 4 8 16\n",
        "[convergence]\nstudy = relaxation\nlevels = 32 64 128\nlam = 1\n",
    ],
)
def test_convergence_orders(tmp_path, section):
    body = BASE + "\n[reaction]\nvariant = linear\nz = -1\n" + section
    out = tmp_path / "o"
    assert run("convergence", "--config", write(tmp_path, body), "--out", out) == 0
    text = (out / "convergence.csv").read_text()
    fitted = float(text.split("fitted_order = ")[1].split()[0])
    assert fitted > 1.0


def test_convergence_needs_three_levels(tmp_path):
    body = BASE + "\n[reaction]\nvariant = linear\nz = -1\n[convergence]\nlevels = 16\n"
    assert run("convergence", "--config", write(tmp_path, body), "--out", tmp_path / "o") == 2


@pytest.mark.parametrize(
    "patch, key",
    [
        (("bc = dirichlet\ng = 0", "bc = oblique\ng = 0\nomega = 1.0"), "node"),
        (("beta = 0.5", "beta = 1.5"), "beta"),
        (("n_steps = 24", "n_steps = many"), "n_steps"),
        (("u0 = 0", "u0 = expr: __import__('os')"), "u0"),
    ],
)
def test_bad_configs_exit_2(tmp_path, capsys, patch, key):
    body = FISHER.replace(*patch)
    assert run("direct", "--config", write(tmp_path, body), "--out", tmp_path / "o") == 2
    assert key in capsys.readouterr().err


def test_missing_config_exits_2(tmp_path):
    assert run("direct", "--out", tmp_path / "o") == 2
    assert run("direct", "--config", tmp_path / "absent.ini", "--out", tmp_path / "o") == 2


@pytest.mark.parametrize("command", ["direct", "invert", "audit", "convergence", "ml"])
def test_check_passes_on_rerun(tmp_path, command):
    body = TWIN + "\n[convergence]\nlevels = 8 16 32\n"
    argv = ["--config", write(tmp_path, body)] if command != "ml" else ["0.7", "-3"]
    out = tmp_path / "o"
    assert run(command, *argv, "--out", out) == 0
    assert run(command, *argv, "--out", out, "--check") == 0


def test_check_detects_drift(tmp_path, capsys):
    out = tmp_path / "o"
    cfg = write(tmp_path, FISHER)
    run("direct", "--config", cfg, "--out", out)
    p = out / "trajectory.csv"
    lines = p.read_text().splitlines()
    lines[-2] = lines[-2].rsplit(",", 1)[0] + ",0.5"
    p.write_text("\n".join(lines) + "\n")
    assert run("direct", "--config", cfg, "--out", out, "--check") == 5
    assert "trajectory.csv" in capsys.readouterr().err


def test_check_without_stored_outputs_is_drift(tmp_path):
    assert run("ml", "0.5", "0", "--out", tmp_path / "empty", "--check") == 5
