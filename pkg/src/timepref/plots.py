"""Point-range charts written as plain SVG text.

Each chart takes the same frame that is saved next to it as CSV, so the
figure can be redrawn with any other tool.
"""
from __future__ import annotations

import math
from html import escape
from typing import Sequence

import numpy as np
import pandas as pd

WIDTH_PER_GROUP = 34
HEIGHT = 420
MARGIN = {"left": 70, "right": 20, "top": 40, "bottom": 120}
SERIES_STYLE = (("#c0392b", "circle"), ("#2471a3", "triangle"), ("#1e8449", "square"))


def _ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    if not np.isfinite(lo) or not np.isfinite(hi) or hi <= lo:
        lo, hi = (0.0, 1.0) if not np.isfinite(lo) else (lo - 0.5, lo + 0.5)
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw)
    return np.arange(math.floor(lo / step) * step, hi + step * 0.5, step)


def _marker(shape: str, x: float, y: float, color: str) -> str:
    if shape == "triangle":
        pts = f"{x:.1f},{y - 5:.1f} {x - 5:.1f},{y + 4:.1f} {x + 5:.1f},{y + 4:.1f}"
        return f'<polygon points="{pts}" fill="{color}"/>'
    if shape == "square":
        return f'<rect x="{x - 4:.1f}" y="{y - 4:.1f}" width="8" height="8" fill="{color}"/>'
    return f'<circle cx="{x:.1f}" cy="{y:.1f}" r="4" fill="{color}"/>'


def point_range_svg(
    frame: pd.DataFrame,
    title: str,
    ylabel: str,
    group: str = "group",
    estimate: str = "estimate",
    lo: str = "ci_lo",
    hi: str = "ci_hi",
    series: str | None = None,
    bold: Sequence[str] = (),
    labels: dict | None = None,
) -> str:
    """Estimates with interval whiskers per group, in the row order of ``frame``.

    ``series`` splits the points into side-by-side markers within a group;
    group labels listed in ``bold`` are drawn in bold.
    """
    groups = list(dict.fromkeys(frame[group].tolist()))
    names = list(dict.fromkeys(frame[series].tolist())) if series else [None]
    width = MARGIN["left"] + MARGIN["right"] + WIDTH_PER_GROUP * max(len(groups), 1) + (120 if series else 0)
    plot_h = HEIGHT - MARGIN["top"] - MARGIN["bottom"]
    values = frame[[estimate, lo, hi]].to_numpy(dtype=float)
    finite = values[np.isfinite(values)]
    ymin, ymax = (finite.min(), finite.max()) if finite.size else (0.0, 1.0)
    ticks = _ticks(ymin, ymax)
    y0, y1 = ticks[0], ticks[-1]

    def ypos(v: float) -> float:
        return MARGIN["top"] + plot_h * (1 - (v - y0) / (y1 - y0))

    def xpos(g: int, s: int) -> float:
        offset = (s - (len(names) - 1) / 2) * (WIDTH_PER_GROUP / (len(names) + 1))
        return MARGIN["left"] + WIDTH_PER_GROUP * (g + 0.5) + offset

    right = MARGIN["left"] + WIDTH_PER_GROUP * len(groups)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<text transform="translate(16,{MARGIN["top"] + plot_h / 2:.1f}) rotate(-90)" text-anchor="middle">{escape(ylabel)}</text>',
    ]
    for t in ticks:
        y = ypos(t)
        out.append(f'<line x1="{MARGIN["left"]}" y1="{y:.1f}" x2="{right}" y2="{y:.1f}" stroke="#dddddd"/>')
        out.append(f'<text x="{MARGIN["left"] - 6}" y="{y + 4:.1f}" text-anchor="end">{t:g}</text>')
    out.append(f'<line x1="{MARGIN["left"]}" y1="{MARGIN["top"]}" x2="{MARGIN["left"]}" y2="{MARGIN["top"] + plot_h}" stroke="black"/>')
    bold = set(bold)
    labels = labels or {}
    base = MARGIN["top"] + plot_h
    for g, name in enumerate(groups):
        x = xpos(g, (len(names) - 1) / 2)
        weight = ' font-weight="bold"' if name in bold else ""
        text = escape(str(labels.get(name, name)))
        out.append(f'<text transform="translate({x:.1f},{base + 12}) rotate(-45)" text-anchor="end"{weight}>{text}</text>')
    for s, sname in enumerate(names):
        color, shape = SERIES_STYLE[s % len(SERIES_STYLE)]
        sub = frame if sname is None else frame[frame[series] == sname]
        for _, row in sub.iterrows():
            g = groups.index(row[group])
            x = xpos(g, s)
            if np.isfinite(row[lo]) and np.isfinite(row[hi]):
                out.append(f'<line x1="{x:.1f}" y1="{ypos(row[lo]):.1f}" x2="{x:.1f}" y2="{ypos(row[hi]):.1f}" stroke="{color}"/>')
            if np.isfinite(row[estimate]):
                out.append(_marker(shape, x, ypos(row[estimate]), color))
        if sname is not None:
            ly = MARGIN["top"] + 14 * s
            out.append(_marker(shape, right + 20, ly, color))
            out.append(f'<text x="{right + 30}" y="{ly + 4}">{escape(str(sname))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
