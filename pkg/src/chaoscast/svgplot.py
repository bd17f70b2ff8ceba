"""Self-contained deterministic SVG plots.

CSV files are the canonical artifacts; these plots are derived views.
Hand-rolled so identical inputs always produce identical bytes (no
renderer metadata, no timestamps).
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import numpy as np

WIDTH = 640
HEIGHT = 420
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 62, 16, 34, 46
PALETTE = ("#1f6fb2", "#d1495b", "#2e8b57", "#e28f2b", "#6a4fa3", "#4f5d66", "#9b3d73")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi == lo:
        return [lo]
    step = (hi - lo) / (n - 1)
    return [lo + i * step for i in range(n)]


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


class _Canvas:
    def __init__(self, x_range, y_range, title, xlabel, ylabel):
        self.x_lo, self.x_hi = x_range
        self.y_lo, self.y_hi = y_range
        if self.x_hi == self.x_lo:
            self.x_hi = self.x_lo + 1.0
        if self.y_hi == self.y_lo:
            self.y_hi = self.y_lo + 1.0
        self.parts: list[str] = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="monospace" font-size="11">',
            f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
            f'<text x="{WIDTH // 2}" y="18" text-anchor="middle" font-size="13">{_escape(title)}</text>',
        ]
        self._frame_and_axes(xlabel, ylabel)

    def px(self, x: float) -> float:
        span = self.x_hi - self.x_lo
        return MARGIN_L + (x - self.x_lo) / span * (WIDTH - MARGIN_L - MARGIN_R)

    def py(self, y: float) -> float:
        span = self.y_hi - self.y_lo
        return HEIGHT - MARGIN_B - (y - self.y_lo) / span * (HEIGHT - MARGIN_T - MARGIN_B)

    def _frame_and_axes(self, xlabel, ylabel):
        x0, x1 = MARGIN_L, WIDTH - MARGIN_R
        y0, y1 = MARGIN_T, HEIGHT - MARGIN_B
        self.parts.append(
            f'<rect x="{x0}" y="{y0}" width="{x1 - x0}" height="{y1 - y0}" '
            'fill="none" stroke="#333" stroke-width="1"/>'
        )
        for tx in _ticks(self.x_lo, self.x_hi):
            px = _fmt(self.px(tx))
            self.parts.append(
                f'<line x1="{px}" y1="{y1}" x2="{px}" y2="{y1 + 4}" stroke="#333"/>'
                f'<text x="{px}" y="{y1 + 16}" text-anchor="middle">{tx:.3g}</text>'
            )
        for ty in _ticks(self.y_lo, self.y_hi):
            py = _fmt(self.py(ty))
            self.parts.append(
                f'<line x1="{x0 - 4}" y1="{py}" x2="{x0}" y2="{py}" stroke="#333"/>'
                f'<text x="{x0 - 7}" y="{py}" text-anchor="end" dominant-baseline="middle">{ty:.3g}</text>'
            )
        self.parts.append(
            f'<text x="{(x0 + x1) // 2}" y="{HEIGHT - 10}" text-anchor="middle">{_escape(xlabel)}</text>'
        )
        self.parts.append(
            f'<text x="14" y="{(y0 + y1) // 2}" text-anchor="middle" '
            f'transform="rotate(-90 14 {(y0 + y1) // 2})">{_escape(ylabel)}</text>'
        )

    def polyline(self, xs, ys, color):
        pts = " ".join(f"{_fmt(self.px(x))},{_fmt(self.py(y))}" for x, y in zip(xs, ys))
        self.parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.4"/>'
        )

    def dots(self, xs, ys, color, r=1.6):
        for x, y in zip(xs, ys):
            self.parts.append(
                f'<circle cx="{_fmt(self.px(x))}" cy="{_fmt(self.py(y))}" r="{r}" '
                f'fill="{color}" fill-opacity="0.55"/>'
            )

    def legend(self, labels):
        y = MARGIN_T + 12
        for i, label in enumerate(labels):
            color = PALETTE[i % len(PALETTE)]
            self.parts.append(
                f'<line x1="{MARGIN_L + 8}" y1="{y}" x2="{MARGIN_L + 28}" y2="{y}" '
                f'stroke="{color}" stroke-width="2"/>'
                f'<text x="{MARGIN_L + 33}" y="{y + 4}">{_escape(label)}</text>'
            )
            y += 15

    def save(self, path):
        self.parts.append("</svg>")
        Path(path).write_text("\n".join(self.parts) + "\n")


def _bounds(arrays: Sequence[np.ndarray]) -> tuple[float, float]:
    lo = min(float(np.min(a)) for a in arrays if len(a))
    hi = max(float(np.max(a)) for a in arrays if len(a))
    if math.isclose(lo, hi):
        return lo - 0.5, hi + 0.5
    pad = 0.04 * (hi - lo)
    return lo - pad, hi + pad


def line_plot(path, series, title="", xlabel="", ylabel=""):
    """series: list of (xs, ys, label) triples drawn as polylines."""
    xs_all = [np.asarray(s[0], dtype=np.float64) for s in series]
    ys_all = [np.asarray(s[1], dtype=np.float64) for s in series]
    canvas = _Canvas(_bounds(xs_all), _bounds(ys_all), title, xlabel, ylabel)
    for i, (xs, ys, _) in enumerate(series):
        canvas.polyline(np.asarray(xs, dtype=np.float64), np.asarray(ys, dtype=np.float64),
                        PALETTE[i % len(PALETTE)])
    canvas.legend([s[2] for s in series if s[2]])
    canvas.save(path)


def scatter_plot(path, xs, ys, title="", xlabel="", ylabel="", max_points=6000):
    """Single-series scatter; points beyond max_points are thinned by a
    fixed stride so the file stays small (and deterministic)."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.size > max_points:
        stride = int(np.ceil(xs.size / max_points))
        xs, ys = xs[::stride], ys[::stride]
    canvas = _Canvas(_bounds([xs]), _bounds([ys]), title, xlabel, ylabel)
    canvas.dots(xs, ys, PALETTE[0])
    canvas.save(path)
