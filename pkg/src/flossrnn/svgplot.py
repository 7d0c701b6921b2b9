"""Tiny dependency-free SVG line plots for experiment reports."""

from __future__ import annotations

import math

_COLORS = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")

_W, _H = 640, 420
_ML, _MR, _MT, _MB = 70, 20, 40, 50


def _ticks(lo: float, hi: float, n: int = 5):
    if hi <= lo:
        hi = lo + 1.0
    span = hi - lo
    step = 10 ** math.floor(math.log10(span / n))
    for mult in (1, 2, 5, 10):
        if span / (step * mult) <= n:
            step *= mult
            break
    first = math.ceil(lo / step) * step
    out = []
    v = first
    while v <= hi + 1e-12 * span:
        out.append(v)
        v += step
    return out


def line_plot(series, title: str, xlabel: str, ylabel: str, path,
              logy: bool = False) -> None:
    """Write a line plot; ``series`` is a list of (label, xs, ys)."""
    pts = []
    for _, xs, ys in series:
        for x, y in zip(xs, ys):
            if logy and y <= 0:
                continue
            pts.append((float(x), math.log10(y) if logy else float(y)))
    if not pts:
        xlo = xhi = ylo = yhi = 0.0
    else:
        xlo = min(p[0] for p in pts)
        xhi = max(p[0] for p in pts)
        ylo = min(p[1] for p in pts)
        yhi = max(p[1] for p in pts)
    if xhi == xlo:
        xhi = xlo + 1.0
    if yhi == ylo:
        yhi = ylo + 1.0
    iw = _W - _ML - _MR
    ih = _H - _MT - _MB

    def sx(x):
        return _ML + iw * (x - xlo) / (xhi - xlo)

    def sy(y):
        return _MT + ih * (1.0 - (y - ylo) / (yhi - ylo))

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
           f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="12">']
    out.append(f'<rect width="{_W}" height="{_H}" fill="white"/>')
    out.append(f'<text x="{_W / 2:.0f}" y="20" text-anchor="middle" '
               f'font-size="14">{title}</text>')
    # axes
    out.append(f'<line x1="{_ML}" y1="{_MT}" x2="{_ML}" y2="{_H - _MB}" '
               'stroke="black"/>')
    out.append(f'<line x1="{_ML}" y1="{_H - _MB}" x2="{_W - _MR}" '
               f'y2="{_H - _MB}" stroke="black"/>')
    for tx in _ticks(xlo, xhi):
        out.append(f'<line x1="{sx(tx):.1f}" y1="{_H - _MB}" x2="{sx(tx):.1f}" '
                   f'y2="{_H - _MB + 4}" stroke="black"/>')
        out.append(f'<text x="{sx(tx):.1f}" y="{_H - _MB + 18}" '
                   f'text-anchor="middle">{tx:g}</text>')
    for ty in _ticks(ylo, yhi):
        label = f"1e{ty:g}" if logy else f"{ty:g}"
        out.append(f'<line x1="{_ML - 4}" y1="{sy(ty):.1f}" x2="{_ML}" '
                   f'y2="{sy(ty):.1f}" stroke="black"/>')
        out.append(f'<text x="{_ML - 8}" y="{sy(ty) + 4:.1f}" '
                   f'text-anchor="end">{label}</text>')
    out.append(f'<text x="{_ML + iw / 2:.0f}" y="{_H - 10}" '
               f'text-anchor="middle">{xlabel}</text>')
    out.append(f'<text x="18" y="{_MT + ih / 2:.0f}" text-anchor="middle" '
               f'transform="rotate(-90 18 {_MT + ih / 2:.0f})">{ylabel}</text>')
    for i, (label, xs, ys) in enumerate(series):
        color = _COLORS[i % len(_COLORS)]
        coords = []
        for x, y in zip(xs, ys):
            if logy:
                if y <= 0:
                    continue
                y = math.log10(y)
            coords.append(f"{sx(float(x)):.1f},{sy(float(y)):.1f}")
        if coords:
            out.append(f'<polyline points="{" ".join(coords)}" fill="none" '
                       f'stroke="{color}" stroke-width="1.5"/>')
        ly = _MT + 14 * i
        out.append(f'<line x1="{_W - _MR - 120}" y1="{ly}" '
                   f'x2="{_W - _MR - 100}" y2="{ly}" stroke="{color}" '
                   'stroke-width="2"/>')
        out.append(f'<text x="{_W - _MR - 95}" y="{ly + 4}">{label}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
