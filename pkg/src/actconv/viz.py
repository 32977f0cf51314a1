"""SVG scatter plots of learned synapse positions.

Output depends only on the trajectory data, so a plot drawn from a
checkpoint and one drawn from its exported trajectory CSV are identical.
Width offsets (beta) run along x, height offsets (alpha) along y.
"""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

SIZE = 320
MARGIN = 30


def positions_svg(name, initial, final):
    initial = np.asarray(initial, dtype=float)
    final = np.asarray(final, dtype=float)
    extent = max(1.5, math.ceil(float(np.abs(np.concatenate([initial, final])).max()) + 0.5))
    scale = (SIZE - 2 * MARGIN) / (2 * extent)
    c = SIZE / 2

    def xy(a, b):
        return c + b * scale, c + a * scale

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">',
        f'<rect width="{SIZE}" height="{SIZE}" fill="white"/>',
        f'<text x="{MARGIN}" y="{MARGIN - 10}" font-family="sans-serif" font-size="14">{escape(name)}</text>',
    ]
    for t in range(-int(extent), int(extent) + 1):
        x0, y0 = xy(-extent, t)
        x1, y1 = xy(extent, t)
        out.append(f'<line x1="{x0:.3f}" y1="{y0:.3f}" x2="{x1:.3f}" y2="{y1:.3f}" stroke="#e0e0e0"/>')
        x0, y0 = xy(t, -extent)
        x1, y1 = xy(t, extent)
        out.append(f'<line x1="{x0:.3f}" y1="{y0:.3f}" x2="{x1:.3f}" y2="{y1:.3f}" stroke="#e0e0e0"/>')
    for a, b in initial:
        x, y = xy(a, b)
        out.append(f'<path d="M{x - 5:.3f},{y:.3f}H{x + 5:.3f}M{x:.3f},{y - 5:.3f}V{y + 5:.3f}" '
                   f'stroke="#888888" stroke-width="1.5"/>')
    for k, (a, b) in enumerate(final):
        x, y = xy(a, b)
        out.append(f'<circle cx="{x:.3f}" cy="{y:.3f}" r="4" fill="#c0392b"><title>synapse {k}: '
                   f'alpha={a:.4f} beta={b:.4f}</title></circle>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def history_svgs(history):
    """``{layer: svg_text}`` using the first and last entries of each layer's history."""
    return {name: positions_svg(name, entries[0][1], entries[-1][1]) for name, entries in history.items()}
