"""Minimal SVG line charts for forecast curves and prediction bands."""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT, MARGIN = 640, 400, 50
COLORS = {"F": "#e6862a", "M": "#2a6fe6"}
FALLBACK = ("#555555", "#2ca02c", "#9467bd", "#8c564b")


def _scale(values, lo, hi, a, b):
    span = hi - lo if hi > lo else 1.0
    return a + (np.asarray(values, dtype=float) - lo) / span * (b - a)


def _points(xs, ys) -> str:
    return " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))


def fan_chart(path, ages, curves: dict, bands: dict | None = None, title: str = "") -> Path:
    """Write an SVG with one polyline per labelled curve set.

    ``curves`` maps a label (e.g. gender) to an (n, p) array of curves drawn
    with fading opacity; ``bands`` optionally maps the same labels to
    ``(lower, upper)`` pairs of (n, p) arrays drawn as filled polygons.
    """
    ages = np.asarray(ages, dtype=float)
    bands = bands or {}
    stacks = [np.atleast_2d(c) for c in curves.values()]
    stacks += [np.atleast_2d(b) for lu in bands.values() for b in lu]
    allv = np.concatenate([s.ravel() for s in stacks]) if stacks else np.zeros(1)
    lo, hi = float(allv.min()), float(allv.max())
    xs = _scale(ages, ages[0], ages[-1], MARGIN, WIDTH - MARGIN)

    def ys(v):
        return _scale(v, lo, hi, HEIGHT - MARGIN, MARGIN)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="20" text-anchor="middle" font-family="sans-serif" '
        f'font-size="14">{escape(title)}</text>',
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" y2="{HEIGHT - MARGIN}" '
        'stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
    ]
    for tick in np.linspace(ages[0], ages[-1], 5):
        x = float(_scale(tick, ages[0], ages[-1], MARGIN, WIDTH - MARGIN))
        parts.append(f'<text x="{x:.1f}" y="{HEIGHT - MARGIN + 16}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="10">{tick:g}</text>')
    for tick in np.linspace(lo, hi, 5):
        y = float(ys(tick))
        parts.append(f'<text x="{MARGIN - 4}" y="{y + 3:.1f}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="10">{tick:.2f}</text>')
    for i, (label, (lower, upper)) in enumerate(bands.items()):
        color = COLORS.get(label, FALLBACK[i % len(FALLBACK)])
        for lrow, urow in zip(np.atleast_2d(lower), np.atleast_2d(upper)):
            outline = _points(xs, ys(urow)) + " " + _points(xs[::-1], ys(lrow)[::-1])
            parts.append(f'<polygon points="{outline}" fill="{color}" fill-opacity="0.15" '
                         'stroke="none"/>')
    for i, (label, stack) in enumerate(curves.items()):
        color = COLORS.get(label, FALLBACK[i % len(FALLBACK)])
        stack = np.atleast_2d(stack)
        n = stack.shape[0]
        for j, row in enumerate(stack):
            opacity = 1.0 if n == 1 else 0.35 + 0.65 * j / (n - 1)
            parts.append(f'<polyline points="{_points(xs, ys(row))}" fill="none" '
                         f'stroke="{color}" stroke-opacity="{opacity:.2f}" stroke-width="1.5"/>')
        parts.append(f'<text x="{WIDTH - MARGIN}" y="{MARGIN + 14 * (i + 1)}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="12" fill="{color}">'
                     f'{escape(str(label))}</text>')
    parts.append("</svg>\n")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(parts), encoding="utf-8")
    return path
