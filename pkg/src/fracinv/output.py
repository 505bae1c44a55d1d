"""Deterministic output files: CSV with ``#`` headers, text reports, a JSON
manifest, small SVG plots and the drift comparison behind ``--check``."""

from __future__ import annotations

import datetime as _dt
import json
import math
import re
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "RunRecorder",
    "compare_outputs",
    "svg_heatmap",
    "svg_lines",
    "write_csv",
]

#: lines containing these keys differ between identical runs
VOLATILE = ("wall_time",)
MANIFEST = "manifest.json"


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, str):
        return v
    return repr(float(v))


def write_csv(path: Path, columns: Sequence[str], rows: Iterable[Sequence], comments: Sequence[str] = ()) -> None:
    """Comma separated, ``.`` decimal point, ``\\n`` line endings; numbers are
    written with ``repr`` so that they round-trip exactly."""
    lines = [f"# {c}" for c in comments]
    lines.append("# " + ",".join(columns))
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


class RunRecorder:
    """Collects the files written by one command and emits the manifest."""

    def __init__(self, out: Path, command: str, config_sha: str | None, version: str) -> None:
        self.out = out
        self.command = command
        self.config_sha = config_sha
        self.version = version
        self.started = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
        self.files: list[str] = []
        out.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.out / name

    def text(self, name: str, body: str) -> None:
        self.path(name).write_text(body, encoding="utf-8", newline="\n")

    def csv(self, name: str, columns, rows, comments=()) -> None:
        write_csv(self.path(name), columns, rows, comments)

    def finish(self, summary: str) -> Path:
        manifest = {
            "command": self.command,
            "tool_version": self.version,
            "config_sha256": self.config_sha,
            "started": self.started,
            "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
            "outputs": sorted(self.files),
            "summary": summary,
        }
        p = self.out / MANIFEST
        p.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return p


# {{{ drift check

_NUMBER = re.compile(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?|nan|inf")


def _numbers_close(a: str, b: str, rtol: float, atol: float) -> bool:
    ta, tb = _NUMBER.split(a), _NUMBER.split(b)
    na, nb = _NUMBER.findall(a), _NUMBER.findall(b)
    if ta != tb or len(na) != len(nb):
        return False
    for x, y in zip(na, nb):
        fx, fy = float(x), float(y)
        if math.isnan(fx) and math.isnan(fy):
            continue
        if fx == fy:
            continue
        if not abs(fx - fy) <= atol + rtol * max(abs(fx), abs(fy)):
            return False
    return True


def _stable_lines(path: Path) -> list[str]:
    return [ln for ln in path.read_text(encoding="utf-8").splitlines() if not any(k in ln for k in VOLATILE)]


def compare_outputs(new: Path, stored: Path, *, rtol: float = 1.0e-9, atol: float = 1.0e-12) -> list[str]:
    """Differences between the files listed in the two manifests; an empty
    list means no drift. Lines mentioning volatile keys are ignored."""
    try:
        files_new = json.loads((new / MANIFEST).read_text())["outputs"]
        files_old = json.loads((stored / MANIFEST).read_text())["outputs"]
    except (OSError, ValueError, KeyError):
        return [f"no stored manifest in {stored}"]
    problems = []
    if files_new != files_old:
        problems.append(f"output file sets differ: {sorted(set(files_new) ^ set(files_old))}")
    for name in files_new:
        if name not in files_old:
            continue
        a, b = new / name, stored / name
        if not b.is_file():
            problems.append(f"{name}: stored copy missing")
            continue
        if name.endswith(".svg"):
            if a.read_bytes() != b.read_bytes():
                problems.append(f"{name}: bytes differ")
            continue
        la, lb = _stable_lines(a), _stable_lines(b)
        if len(la) != len(lb):
            problems.append(f"{name}: {len(la)} lines vs {len(lb)} stored")
            continue
        for k, (x, y) in enumerate(zip(la, lb)):
            if x != y and not _numbers_close(x, y, rtol, atol):
                problems.append(f"{name}:{k + 1}: {x!r} != {y!r}")
                break
    return problems


# }}}


# {{{ svg

_W, _H, _PAD = 480, 320, 48


def _scale(v: np.ndarray, lo: float, hi: float, a: float, b: float) -> np.ndarray:
    span = hi - lo if hi > lo else 1.0
    return a + (v - lo) / span * (b - a)


def svg_lines(
    path: Path,
    series: Sequence[tuple[np.ndarray, np.ndarray, str]],
    title: str,
    *,
    logx: bool = False,
    logy: bool = False,
) -> None:
    colors = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")
    xs = [np.log10(s[0]) if logx else np.asarray(s[0], float) for s in series]
    ys = [np.log10(np.maximum(s[1], 1e-300)) if logy else np.asarray(s[1], float) for s in series]
    x_lo, x_hi = min(x.min() for x in xs), max(x.max() for x in xs)
    y_lo, y_hi = min(y.min() for y in ys), max(y.max() for y in ys)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<rect x="{_PAD}" y="{_PAD}" width="{_W - 2 * _PAD}" height="{_H - 2 * _PAD}" fill="none" stroke="black"/>',
        f'<text x="{_PAD}" y="{_H - 12}" font-size="10">{"log10 " if logx else ""}x: {x_lo:.3g} .. {x_hi:.3g}</text>',
        f'<text x="{_W - _PAD}" y="{_H - 12}" text-anchor="end" font-size="10">{"log10 " if logy else ""}y: {y_lo:.3g} .. {y_hi:.3g}</text>',
    ]
    for k, ((_, _, label), x, y) in enumerate(zip(series, xs, ys)):
        px = _scale(x, x_lo, x_hi, _PAD, _W - _PAD)
        py = _scale(y, y_lo, y_hi, _H - _PAD, _PAD)
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px, py))
        c = colors[k % len(colors)]
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{c}" stroke-width="1.5"/>')
        parts.append(f'<text x="{_W - _PAD - 4}" y="{_PAD + 14 + 14 * k}" text-anchor="end" font-size="11" fill="{c}">{label}</text>')
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n", encoding="utf-8")


def svg_heatmap(path: Path, values: np.ndarray, title: str) -> None:
    """Rows run over time (top = 0), columns over nodes."""
    values = np.asarray(values, float)
    rows = values[:: max(1, values.shape[0] // 64)]
    cols = rows[:, :: max(1, rows.shape[1] // 64)]
    lo, hi = float(cols.min()), float(cols.max())
    nr, nc = cols.shape
    cw, ch = (_W - 2 * _PAD) / nc, (_H - 2 * _PAD) / nr
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
    ]
    level = _scale(cols, lo, hi, 0.0, 1.0)
    for i in range(nr):
        for j in range(nc):
            r = int(255 * level[i, j])
            b = 255 - r
            parts.append(
                f'<rect x="{_PAD + j * cw:.2f}" y="{_PAD + i * ch:.2f}" width="{cw + 0.05:.2f}" '
                f'height="{ch + 0.05:.2f}" fill="rgb({r},64,{b})"/>'
            )
    parts.append(f'<text x="{_PAD}" y="{_H - 12}" font-size="10">range {lo:.3g} .. {hi:.3g}</text>')
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n", encoding="utf-8")


# }}}
