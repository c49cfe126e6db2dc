"""Tiny SVG line charts for loss curves."""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
           "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def _ticks(lo, hi, log):
    if log:
        return [10.0 ** e for e in range(math.floor(lo), math.ceil(hi) + 1)]
    if hi == lo:
        return [lo]
    step = 10 ** math.floor(math.log10((hi - lo) / 4))
    for mult in (1, 2, 5, 10):
        if (hi - lo) / (step * mult) <= 6:
            step *= mult
            break
    first = math.ceil(lo / step) * step
    return [first + i * step for i in range(int((hi - first) / step + 1e-9) + 1)]


def line_chart(series: dict, *, title="", xlabel="iteration", ylabel="loss",
               log_y=False, width=640, height=400) -> str:
    """Render ``{label: (xs, ys)}`` as an SVG document string.

    Non-finite points, and non-positive ones on a log axis, are skipped.
    """
    left, right, top, bottom = 70, 150, 30, 50
    pw, ph = width - left - right, height - top - bottom

    def ty(v):
        return math.log10(v) if log_y else v

    clean = {}
    for label, (xs, ys) in series.items():
        pts = [(float(x), ty(float(y))) for x, y in zip(xs, ys)
               if math.isfinite(y) and math.isfinite(x) and (not log_y or y > 0)]
        clean[label] = pts
    allpts = [p for pts in clean.values() for p in pts]
    if allpts:
        x0, x1 = min(p[0] for p in allpts), max(p[0] for p in allpts)
        y0, y1 = min(p[1] for p in allpts), max(p[1] for p in allpts)
    else:
        x0, x1, y0, y1 = 0.0, 1.0, 0.0, 1.0
    if log_y:
        y0, y1 = math.floor(y0), math.ceil(y1)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0

    def px(x):
        return left + (x - x0) / (x1 - x0) * pw

    def py(y):
        return top + ph - (y - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect width="{width}" height="{height}" fill="white"/>']
    if title:
        out.append(f'<text x="{left + pw / 2:.1f}" y="18" text-anchor="middle" '
                   f'font-size="13">{escape(title)}</text>')
    out.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" '
               'stroke="black"/>')
    for t in _ticks(x0, x1, False):
        out.append(f'<line x1="{px(t):.1f}" y1="{top + ph}" x2="{px(t):.1f}" '
                   f'y2="{top + ph + 4}" stroke="black"/>')
        out.append(f'<text x="{px(t):.1f}" y="{top + ph + 16}" '
                   f'text-anchor="middle">{t:g}</text>')
    ticks = _ticks(10.0 ** y0, 10.0 ** y1, True) if log_y else _ticks(y0, y1, False)
    for t in ticks:
        y = py(math.log10(t) if log_y else t)
        out.append(f'<line x1="{left - 4}" y1="{y:.1f}" x2="{left}" y2="{y:.1f}" '
                   'stroke="black"/>')
        out.append(f'<text x="{left - 6}" y="{y + 4:.1f}" text-anchor="end">{t:g}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 10}" '
               f'text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {top + ph / 2:.1f})">{escape(ylabel)}</text>')
    for idx, (label, pts) in enumerate(clean.items()):
        color = PALETTE[idx % len(PALETTE)]
        if pts:
            coords = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in pts)
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                       f'points="{coords}"/>')
        ly = top + 12 + 16 * idx
        out.append(f'<line x1="{left + pw + 10}" y1="{ly}" x2="{left + pw + 30}" '
                   f'y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 34}" y="{ly + 4}">{escape(str(label))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
