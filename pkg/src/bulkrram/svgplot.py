"""Tiny dependency-free SVG plots for run artifacts.

CSV files are the canonical outputs; these line/scatter renderings are a
convenience for eyeballing staircases, fits, sweeps, and regressions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

__all__ = ["Series", "plot", "save"]

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


@dataclass(frozen=True)
class Series:
    name: str
    x: Sequence[float]
    y: Sequence[float]
    kind: str = "line"  # "line" | "scatter"


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    span = hi - lo
    step = 10.0 ** math.floor(math.log10(span / n))
    for mult in (1.0, 2.0, 5.0, 10.0):
        if span / (step * mult) <= n:
            step *= mult
            break
    first = math.ceil(lo / step) * step
    out = []
    t = first
    while t <= hi + 1e-12 * span:
        out.append(round(t, 12))
        t += step
    return out


def _fmt(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-3:
        return f"{v:.1e}"
    return f"{v:.4g}"


def plot(series: list[Series], title: str = "", x_label: str = "",
         y_label: str = "", log_x: bool = False, log_y: bool = False,
         width: int = 640, height: int = 440) -> str:
    """Render series into a standalone SVG document string."""

    def tx(v: float) -> float:
        return math.log10(v) if log_x else v

    def ty(v: float) -> float:
        return math.log10(v) if log_y else v

    xs = [tx(v) for s in series for v in s.x]
    ys = [ty(v) for s in series for v in s.y]
    if not xs:
        xs = ys = [0.0, 1.0]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    pad_x = 0.04 * (x_hi - x_lo)
    pad_y = 0.06 * (y_hi - y_lo)
    x_lo, x_hi = x_lo - pad_x, x_hi + pad_x
    y_lo, y_hi = y_lo - pad_y, y_hi + pad_y

    m_left, m_right, m_top, m_bot = 72, 16, 34, 52
    pw, ph = width - m_left - m_right, height - m_top - m_bot

    def sx(v: float) -> float:
        return m_left + (tx(v) - x_lo) / (x_hi - x_lo) * pw

    def sy(v: float) -> float:
        return m_top + ph - (ty(v) - y_lo) / (y_hi - y_lo) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
           f'height="{height}" viewBox="0 0 {width} {height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<rect x="{m_left}" y="{m_top}" width="{pw}" height="{ph}" '
           'fill="none" stroke="#333"/>']
    font = 'font-family="sans-serif" font-size="11"'
    if title:
        out.append(f'<text x="{width / 2}" y="20" text-anchor="middle" '
                   f'{font} font-size="14">{title}</text>')

    for t in _ticks(x_lo, x_hi):
        px = m_left + (t - x_lo) / (x_hi - x_lo) * pw
        label = _fmt(10.0 ** t) if log_x else _fmt(t)
        out.append(f'<line x1="{px:.1f}" y1="{m_top + ph}" x2="{px:.1f}" '
                   f'y2="{m_top + ph + 4}" stroke="#333"/>')
        out.append(f'<text x="{px:.1f}" y="{m_top + ph + 16}" '
                   f'text-anchor="middle" {font}>{label}</text>')
    for t in _ticks(y_lo, y_hi):
        py = m_top + ph - (t - y_lo) / (y_hi - y_lo) * ph
        label = _fmt(10.0 ** t) if log_y else _fmt(t)
        out.append(f'<line x1="{m_left - 4}" y1="{py:.1f}" x2="{m_left}" '
                   f'y2="{py:.1f}" stroke="#333"/>')
        out.append(f'<text x="{m_left - 7}" y="{py + 3:.1f}" '
                   f'text-anchor="end" {font}>{label}</text>')
    if x_label:
        out.append(f'<text x="{m_left + pw / 2}" y="{height - 14}" '
                   f'text-anchor="middle" {font}>{x_label}</text>')
    if y_label:
        out.append(f'<text x="16" y="{m_top + ph / 2}" text-anchor="middle" '
                   f'{font} transform="rotate(-90 16 {m_top + ph / 2})">'
                   f'{y_label}</text>')

    for i, s in enumerate(series):
        color = _COLORS[i % len(_COLORS)]
        pts = [(sx(a), sy(b)) for a, b in zip(s.x, s.y)]
        if s.kind == "line" and len(pts) > 1:
            path = " ".join(f"{a:.2f},{b:.2f}" for a, b in pts)
            out.append(f'<polyline points="{path}" fill="none" '
                       f'stroke="{color}" stroke-width="1.5"/>')
        else:
            for a, b in pts:
                out.append(f'<circle cx="{a:.2f}" cy="{b:.2f}" r="2.2" '
                           f'fill="{color}" fill-opacity="0.7"/>')
        if s.name:
            ly = m_top + 14 + 15 * i
            out.append(f'<line x1="{width - 150}" y1="{ly - 4}" '
                       f'x2="{width - 128}" y2="{ly - 4}" stroke="{color}" '
                       'stroke-width="2"/>')
            out.append(f'<text x="{width - 122}" y="{ly}" {font}>{s.name}</text>')
    out.append("</svg>")
    return "\n".join(out)


def save(path: str, series: list[Series], **kwargs) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(plot(series, **kwargs))
