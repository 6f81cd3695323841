"""Minimal SVG rendering of step-function profiles, one panel per accuracy."""
from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]
DASHES = ["", "6,3", "2,2", "8,3,2,3", "4,4"]

PANEL_W, PANEL_H = 360, 260
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 50, 15, 30, 45


def _xmap(lo, hi, log2):
    if log2:
        a, b = math.log2(lo), math.log2(hi)
        return lambda v: (math.log2(v) - a) / (b - a)
    return lambda v: (v - lo) / (hi - lo)


def _step_points(breaks, vals, lo, hi):
    pts = [(lo, 0.0)]
    cur = 0.0
    for b, v in zip(breaks, vals):
        if b > hi:
            break
        b = max(b, lo)
        pts.append((b, cur))
        pts.append((b, v))
        cur = v
    pts.append((hi, cur))
    return pts


def _panel(ox, title, curves, xlim, log2, xlabel, ylabel):
    lo, hi = xlim
    fx = _xmap(lo, hi, log2)
    w = PANEL_W - MARGIN_L - MARGIN_R
    h = PANEL_H - MARGIN_T - MARGIN_B
    X = lambda v: ox + MARGIN_L + w * fx(v)
    Y = lambda v: MARGIN_T + h * (1.0 - v)
    out = [f'<text x="{ox + PANEL_W / 2:.1f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
           f'<rect x="{ox + MARGIN_L}" y="{MARGIN_T}" width="{w}" height="{h}" fill="none" stroke="#333"/>']
    if log2:
        ticks = [2 ** k for k in range(int(math.log2(lo)), int(math.log2(hi)) + 1)]
        label = lambda v: f"{v:g}"
    else:
        step = 50 if hi - lo > 100 else (hi - lo) / 5
        ticks = [lo + i * step for i in range(int((hi - lo) / step) + 1)]
        label = lambda v: f"{v:g}"
    for t in ticks:
        out.append(f'<line x1="{X(t):.1f}" y1="{Y(0):.1f}" x2="{X(t):.1f}" y2="{Y(0) + 4:.1f}" stroke="#333"/>')
        out.append(f'<text x="{X(t):.1f}" y="{Y(0) + 16:.1f}" text-anchor="middle" font-size="10">{label(t)}</text>')
    for v in (0, 0.25, 0.5, 0.75, 1.0):
        out.append(f'<line x1="{ox + MARGIN_L - 4}" y1="{Y(v):.1f}" x2="{ox + MARGIN_L}" y2="{Y(v):.1f}" stroke="#333"/>')
        out.append(f'<text x="{ox + MARGIN_L - 7}" y="{Y(v) + 3:.1f}" text-anchor="end" font-size="10">{v:g}</text>')
    out.append(f'<text x="{ox + MARGIN_L + w / 2:.1f}" y="{PANEL_H - 8}" text-anchor="middle" font-size="11">{escape(xlabel)}</text>')
    out.append(f'<text x="{ox + 12}" y="{MARGIN_T + h / 2:.1f}" font-size="11" text-anchor="middle" '
               f'transform="rotate(-90 {ox + 12} {MARGIN_T + h / 2:.1f})">{escape(ylabel)}</text>')
    for i, (name, (breaks, vals)) in enumerate(curves.items()):
        pts = _step_points(list(breaks), list(vals), lo, hi)
        d = " ".join(f"{X(x):.2f},{Y(y):.2f}" for x, y in pts)
        dash = f' stroke-dasharray="{DASHES[i % len(DASHES)]}"' if DASHES[i % len(DASHES)] else ""
        out.append(f'<polyline class="profile" data-solver="{escape(name)}" points="{d}" fill="none" '
                   f'stroke="{COLORS[i % len(COLORS)]}" stroke-width="1.6"{dash}/>')
        ly = MARGIN_T + h - 12 - 14 * i
        lx = ox + MARGIN_L + w - 110
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{COLORS[i % len(COLORS)]}" '
                   f'stroke-width="1.6"{dash}/>')
        out.append(f'<text x="{lx + 25}" y="{ly + 4}" font-size="10">{escape(name)}</text>')
    return out


def profile_svg(panels, xlim, log2: bool, xlabel: str, ylabel: str) -> str:
    """``panels`` is a list of ``(title, {solver: (breaks, values)})``."""
    width = PANEL_W * len(panels)
    body = []
    for i, (title, curves) in enumerate(panels):
        body += _panel(i * PANEL_W, title, curves, xlim, log2, xlabel, ylabel)
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{PANEL_H}" '
            f'viewBox="0 0 {width} {PANEL_H}" font-family="sans-serif">\n'
            f'<rect width="100%" height="100%" fill="white"/>\n' + "\n".join(body) + "\n</svg>\n")


def write_svg(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path
