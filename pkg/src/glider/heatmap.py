"""Expert-selection heatmaps (CSV + self-contained SVG) from routing traces."""

from __future__ import annotations

import csv
from html import escape
from pathlib import Path

import numpy as np

from .router import RoutingTrace

CELL_W = 44
CELL_H = 22
LEFT = 120
TOP = 48
LOW = (255, 255, 255)
HIGH = (8, 48, 107)


def selection_frequency(trace: RoutingTrace) -> np.ndarray:
    """N × m matrix: selections per routed token at each module (columns sum to k under top-k)."""
    if not trace.records:
        raise ValueError("trace is empty")
    n = trace.tokens_per_module()
    n[n == 0] = 1
    return trace.selection_counts() / n


def _color(f: float) -> str:
    f = min(max(f, 0.0), 1.0)
    r, g, b = (round(lo + f * (hi - lo)) for lo, hi in zip(LOW, HIGH))
    return f"#{r:02x}{g:02x}{b:02x}"


def render_svg(freq: np.ndarray, expert_names: list[str], oracle: str | None = None, title: str = "Expert selection frequency") -> str:
    n_exp, n_mod = freq.shape
    width = LEFT + n_mod * CELL_W + 20
    height = TOP + n_exp * CELL_H + 20
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="monospace" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="#ffffff"/>',
        f'<text x="{LEFT}" y="16" font-size="13">{escape(title)}</text>',
    ]
    for m in range(n_mod):
        x = LEFT + m * CELL_W + CELL_W // 2
        out.append(f'<text x="{x}" y="{TOP - 8}" text-anchor="middle">m{m}</text>')
    for i, name in enumerate(expert_names):
        y = TOP + i * CELL_H
        out.append(f'<text x="{LEFT - 6}" y="{y + CELL_H - 7}" text-anchor="end">{escape(name)}</text>')
        for m in range(n_mod):
            f = float(freq[i, m])
            x = LEFT + m * CELL_W
            ink = "#ffffff" if f > 0.55 else "#000000"
            out.append(f'<rect x="{x}" y="{y}" width="{CELL_W}" height="{CELL_H}" fill="{_color(f)}" stroke="#dddddd"/>')
            out.append(f'<text x="{x + CELL_W // 2}" y="{y + CELL_H - 7}" text-anchor="middle" fill="{ink}">{f:.2f}</text>')
    if oracle is not None and oracle in expert_names:
        i = expert_names.index(oracle)
        out.append(
            f'<rect x="{LEFT - 1}" y="{TOP + i * CELL_H - 1}" width="{n_mod * CELL_W + 2}" height="{CELL_H + 2}" '
            f'fill="none" stroke="#d62728" stroke-width="2"/>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_heatmap(trace: RoutingTrace, path, oracle: str | None = None, title: str | None = None) -> tuple[Path, Path]:
    """Write ``<path>.csv`` and ``<path>.svg``; returns both paths."""
    freq = selection_frequency(trace)
    stem = Path(path)
    if stem.suffix in (".csv", ".svg"):
        stem = stem.with_suffix("")
    csv_path = stem.with_suffix(".csv")
    svg_path = stem.with_suffix(".svg")
    with csv_path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["expert"] + [f"module_{m}" for m in range(freq.shape[1])])
        for name, row in zip(trace.expert_names, freq):
            writer.writerow([name] + [repr(float(v)) for v in row])
    svg_path.write_text(render_svg(freq, trace.expert_names, oracle, title or "Expert selection frequency"), encoding="utf-8")
    return csv_path, svg_path
