"""Tiny dependency-free SVG writers for line and bar charts.

Deterministic text output: same data, same bytes.
"""

from __future__ import annotations

import math

_W, _H = 640, 400
_ML, _MR, _MT, _MB = 60, 20, 30, 45
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
_F = "{:.4g}".format


def _finite_range(lo: float, hi: float) -> tuple[float, float]:
    if not (math.isfinite(lo) and math.isfinite(hi)):
        return 0.0, 1.0
    if lo == hi:
        pad = abs(lo) * 0.1 or 1.0
        return lo - pad, hi + pad
    return lo, hi


def _header(title: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2}" y="20" text-anchor="middle" font-family="sans-serif" '
        f'font-size="14">{title}</text>',
    ]


def _axes(x0: float, x1: float, y0: float, y1: float, xlabel: str, ylabel: str) -> list[str]:
    parts = [
        f'<line x1="{_ML}" y1="{_H - _MB}" x2="{_W - _MR}" y2="{_H - _MB}" stroke="black"/>',
        f'<line x1="{_ML}" y1="{_MT}" x2="{_ML}" y2="{_H - _MB}" stroke="black"/>',
        f'<text x="{(_ML + _W - _MR) / 2}" y="{_H - 8}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">{xlabel}</text>',
        f'<text x="14" y="{(_MT + _H - _MB) / 2}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 14 {(_MT + _H - _MB) / 2})">{ylabel}</text>',
    ]
    for frac in (0.0, 0.5, 1.0):
        xv = x0 + frac * (x1 - x0)
        yv = y0 + frac * (y1 - y0)
        px = _ML + frac * (_W - _ML - _MR)
        py = _H - _MB - frac * (_H - _MT - _MB)
        parts.append(f'<text x="{px}" y="{_H - _MB + 16}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="10">{_F(xv)}</text>')
        parts.append(f'<text x="{_ML - 6}" y="{py + 3}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="10">{_F(yv)}</text>')
    return parts


def line_chart(series: dict[str, tuple], title: str, xlabel: str, ylabel: str) -> str:
    """Multi-series line chart; each series is (x array, y array)."""
    xs = [float(x) for _, (sx, _) in series.items() for x in sx]
    ys = [float(y) for _, (_, sy) in series.items() for y in sy]
    if not xs:
        xs, ys = [0.0, 1.0], [0.0, 1.0]
    x0, x1 = _finite_range(min(xs), max(xs))
    y0, y1 = _finite_range(min(ys), max(ys))
    parts = _header(title) + _axes(x0, x1, y0, y1, xlabel, ylabel)

    def px(v):
        return _ML + (v - x0) / (x1 - x0) * (_W - _ML - _MR)

    def py(v):
        return _H - _MB - (v - y0) / (y1 - y0) * (_H - _MT - _MB)

    for i, (name, (sx, sy)) in enumerate(series.items()):
        color = _COLORS[i % len(_COLORS)]
        pts = " ".join(f"{_F(px(float(x)))},{_F(py(float(y)))}" for x, y in zip(sx, sy))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{_W - _MR - 5}" y="{_MT + 14 * (i + 1)}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="11" fill="{color}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def bar_chart(labels: list[str], groups: dict[str, list[float]], title: str,
              xlabel: str, ylabel: str) -> str:
    """Grouped bar chart; each group supplies one value per label."""
    values = [v for vals in groups.values() for v in vals]
    top = max(values) if values else 1.0
    y0, y1 = 0.0, top if top > 0 else 1.0
    parts = _header(title) + _axes(0.0, float(len(labels)), y0, y1, xlabel, ylabel)
    span = _W - _ML - _MR
    slot = span / max(len(labels), 1)
    n_groups = max(len(groups), 1)
    bar_w = 0.8 * slot / n_groups
    for gi, (name, vals) in enumerate(groups.items()):
        color = _COLORS[gi % len(_COLORS)]
        for li, v in enumerate(vals):
            x = _ML + li * slot + 0.1 * slot + gi * bar_w
            h = (float(v) - y0) / (y1 - y0) * (_H - _MT - _MB)
            y = _H - _MB - h
            parts.append(f'<rect x="{_F(x)}" y="{_F(y)}" width="{_F(bar_w)}" '
                         f'height="{_F(h)}" fill="{color}"/>')
        parts.append(f'<text x="{_W - _MR - 5}" y="{_MT + 14 * (gi + 1)}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="11" fill="{color}">{name}</text>')
    for li, lab in enumerate(labels):
        x = _ML + (li + 0.5) * slot
        parts.append(f'<text x="{_F(x)}" y="{_H - _MB + 16}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="10">{lab}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
