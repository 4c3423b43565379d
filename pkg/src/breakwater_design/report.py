"""Minimal SVG plotting for convergence bands.

Only what the comparison report needs: one median line and one shaded
quantile band per series, linear axes, a legend. CSV files stay the
authoritative output.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


@dataclass
class Band:
    label: str
    x: np.ndarray
    lo: np.ndarray
    mid: np.ndarray
    hi: np.ndarray


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** np.floor(np.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = np.ceil(lo / step) * step
    return [float(v) for v in np.arange(start, hi + 0.5 * step, step)]


def _fmt(v: float) -> str:
    return f"{v:.4g}"


def band_svg(
    bands: Sequence[Band],
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
    width: int = 720,
    height: int = 440,
) -> str:
    """SVG document with a shaded band and a median line per series."""
    left, right, top, bottom = 70, 170, 40, 55
    pw, ph = width - left - right, height - top - bottom
    xs = [b.x[np.isfinite(b.mid)] for b in bands]
    ys = [np.concatenate([v[np.isfinite(v)] for v in (b.lo, b.mid, b.hi)]) for b in bands]
    xs = np.concatenate(xs) if xs else np.zeros(1)
    ys = np.concatenate(ys) if ys else np.zeros(1)
    if xs.size == 0:
        xs = np.zeros(1)
    if ys.size == 0:
        ys = np.zeros(1)
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    if x1 == x0:
        x1 = x0 + 1.0
    pad = 0.05 * (y1 - y0) if y1 > y0 else 1.0
    y0, y1 = y0 - pad, y1 + pad

    def px(v):
        return left + (v - x0) / (x1 - x0) * pw

    def py(v):
        return top + ph - (v - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
    ]
    for t in _ticks(x0, x1):
        out.append(f'<line x1="{px(t):.1f}" y1="{top + ph}" x2="{px(t):.1f}" y2="{top + ph + 5}" stroke="#444"/>')
        out.append(f'<text x="{px(t):.1f}" y="{top + ph + 18}" text-anchor="middle">{_fmt(t)}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<line x1="{left - 5}" y1="{py(t):.1f}" x2="{left}" y2="{py(t):.1f}" stroke="#444"/>')
        out.append(f'<text x="{left - 8}" y="{py(t) + 4:.1f}" text-anchor="end">{_fmt(t)}</text>')
    for k, b in enumerate(bands):
        color = PALETTE[k % len(PALETTE)]
        ok = np.isfinite(b.mid)
        x, lo, mid, hi = b.x[ok], b.lo[ok], b.mid[ok], b.hi[ok]
        if len(x) == 0:
            continue
        upper = " ".join(f"{px(a):.1f},{py(c):.1f}" for a, c in zip(x, hi))
        lower = " ".join(f"{px(a):.1f},{py(c):.1f}" for a, c in zip(x[::-1], lo[::-1]))
        out.append(f'<polygon points="{upper} {lower}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        line = " ".join(f"{px(a):.1f},{py(c):.1f}" for a, c in zip(x, mid))
        out.append(f'<polyline points="{line}" fill="none" stroke="{color}" stroke-width="2"/>')
        ly = top + 10 + 20 * k
        out.append(f'<rect x="{left + pw + 15}" y="{ly}" width="14" height="10" fill="{color}"/>')
        out.append(f'<text x="{left + pw + 35}" y="{ly + 9}">{escape(b.label)}</text>')
    if title:
        out.append(f'<text x="{left + pw / 2:.1f}" y="{top - 15}" text-anchor="middle" font-size="14">{escape(title)}</text>')
    if xlabel:
        out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    if ylabel:
        cy = top + ph / 2
        out.append(f'<text x="16" y="{cy:.1f}" text-anchor="middle" transform="rotate(-90 16 {cy:.1f})">{escape(ylabel)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_band_svg(path: str | Path, bands: Sequence[Band], **kwargs) -> None:
    Path(path).write_text(band_svg(bands, **kwargs))
