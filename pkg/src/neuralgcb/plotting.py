"""Regret curves as a standalone SVG: mean line and a one-std band per algorithm."""
from __future__ import annotations

import csv
from collections import defaultdict
from xml.sax.saxutils import escape

import numpy as np

from .experiment import CSV_HEADER

__all__ = ["PlotError", "read_regret_csvs", "curve_stats", "render_svg"]

_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"]
WIDTH, HEIGHT = 720, 440
MARGIN = {"left": 70, "right": 150, "top": 20, "bottom": 50}


class PlotError(ValueError):
    pass


def read_regret_csvs(paths):
    """algorithm -> seed -> (t array, cumulative regret array)."""
    if not paths:
        raise PlotError("no CSV files given")
    data = defaultdict(lambda: defaultdict(list))
    for path in paths:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise PlotError(f"{path}: empty file")
            if header != CSV_HEADER:
                raise PlotError(f"{path}: unexpected header {header}")
            n = 0
            for lineno, row in enumerate(reader, start=2):
                if len(row) != len(CSV_HEADER):
                    raise PlotError(f"{path}:{lineno}: expected {len(CSV_HEADER)} fields")
                try:
                    key = (row[0], int(row[1]))
                    data[row[2]][key].append((int(row[3]), float(row[4])))
                except ValueError as exc:
                    raise PlotError(f"{path}:{lineno}: {exc}") from None
                n += 1
            if n == 0:
                raise PlotError(f"{path}: no data rows")
    out = {}
    for alg, runs in data.items():
        out[alg] = {}
        for key, pts in runs.items():
            pts.sort()
            out[alg][key] = (np.array([p[0] for p in pts]), np.array([p[1] for p in pts]))
    return out


def curve_stats(runs):
    """Per-t mean and population std across runs, over the t values all runs share."""
    ts = None
    for t, _ in runs.values():
        ts = set(t.tolist()) if ts is None else ts & set(t.tolist())
    if not ts:
        raise PlotError("runs share no rounds")
    grid = np.array(sorted(ts))
    stack = []
    for t, y in runs.values():
        idx = {v: i for i, v in enumerate(t.tolist())}
        stack.append(y[[idx[v] for v in grid]])
    stack = np.array(stack)
    return grid, stack.mean(axis=0), stack.std(axis=0)


def _thin(n, limit=600):
    # keep at most ``limit`` vertices per curve
    if n <= limit:
        return np.arange(n)
    return np.unique(np.linspace(0, n - 1, limit).round().astype(int))


def render_svg(data, title="Cumulative regret"):
    if not data:
        raise PlotError("nothing to plot")
    stats = {alg: curve_stats(runs) for alg, runs in sorted(data.items())}
    t_max = max(float(g[-1]) for g, _, _ in stats.values())
    t_min = min(float(g[0]) for g, _, _ in stats.values())
    y_max = max(float(np.max(m + s)) for _, m, s in stats.values())
    y_min = min(0.0, min(float(np.min(m - s)) for _, m, s in stats.values()))
    if y_max <= y_min:
        y_max = y_min + 1.0
    if t_max <= t_min:
        t_max = t_min + 1.0
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def sx(t):
        return MARGIN["left"] + (t - t_min) / (t_max - t_min) * pw

    def sy(v):
        return MARGIN["top"] + (1 - (v - y_min) / (y_max - y_min)) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{MARGIN["left"]}" y="14">{escape(title)}</text>',
    ]
    x0, y0 = MARGIN["left"], MARGIN["top"] + ph
    parts.append(f'<line x1="{x0}" y1="{y0}" x2="{x0 + pw}" y2="{y0}" stroke="black"/>')
    parts.append(f'<line x1="{x0}" y1="{MARGIN["top"]}" x2="{x0}" y2="{y0}" stroke="black"/>')
    for frac in np.linspace(0, 1, 5):
        t = t_min + frac * (t_max - t_min)
        v = y_min + frac * (y_max - y_min)
        parts.append(f'<text x="{sx(t):.1f}" y="{y0 + 18}" text-anchor="middle">{t:.0f}</text>')
        parts.append(f'<text x="{x0 - 6}" y="{sy(v) + 4:.1f}" text-anchor="end">{v:.1f}</text>')
    parts.append(f'<text x="{x0 + pw / 2:.1f}" y="{HEIGHT - 10}" text-anchor="middle">round t</text>')

    for i, (alg, (grid, mean, std)) in enumerate(stats.items()):
        color = _COLORS[i % len(_COLORS)]
        keep = _thin(len(grid))
        g, m, s = grid[keep], mean[keep], std[keep]
        if len(data[alg]) > 1:
            upper = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(g, m + s))
            lower = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(g[::-1], (m - s)[::-1]))
            parts.append(
                f'<polygon class="band" data-alg="{escape(alg)}" points="{upper} {lower}" '
                f'fill="{color}" fill-opacity="0.2" stroke="none"/>'
            )
        line = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(g, m))
        parts.append(
            f'<polyline class="mean" data-alg="{escape(alg)}" points="{line}" fill="none" '
            f'stroke="{color}" stroke-width="1.8"/>'
        )
        ly = MARGIN["top"] + 16 * i + 10
        lx = MARGIN["left"] + pw + 12
        parts.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 18}" y2="{ly}" stroke="{color}" stroke-width="3"/>')
        parts.append(f'<text x="{lx + 24}" y="{ly + 4}">{escape(alg)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
