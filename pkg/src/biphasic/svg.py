"""Minimal static SVG charts: lines, filled bands and histograms on linear axes.

Output is deterministic text, so plots can be diffed and asserted on
structurally (one ``<path class="series">`` per line series).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from html import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#7f7f7f")


def _num(x: float) -> str:
    return f"{x:.2f}".rstrip("0").rstrip(".")


def nice_ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    if not hi > lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** np.floor(np.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=10 * mag)
    start = np.ceil(lo / step) * step
    return np.arange(start, hi + 0.5 * step, step)


def _label(v: float) -> str:
    return f"{v:.6g}"


@dataclass
class Chart:
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    width: int = 640
    height: int = 420
    xlim: tuple[float, float] | None = None
    ylim: tuple[float, float] | None = None
    margin: tuple[int, int, int, int] = (40, 20, 50, 60)  # top, right, bottom, left
    _items: list = field(default_factory=list)

    def line(self, x, y, label: str = "", color: str | None = None, width: float = 1.5):
        self._items.append(("line", np.asarray(x, float), np.asarray(y, float), label, color, width))
        return self

    def band(self, x, lo, hi, label: str = "", color: str | None = None, opacity: float = 0.25):
        self._items.append(("band", np.asarray(x, float), (np.asarray(lo, float), np.asarray(hi, float)),
                            label, color, opacity))
        return self

    def points(self, x, y, label: str = "", color: str | None = None, r: float = 2.5):
        self._items.append(("points", np.asarray(x, float), np.asarray(y, float), label, color, r))
        return self

    def histogram(self, values, bins: int = 40, label: str = "", color: str | None = None):
        counts, edges = np.histogram(np.asarray(values, float), bins=bins, density=True)
        self._items.append(("hist", edges, counts, label, color, 0.0))
        return self

    def _limits(self):
        xs, ys = [], []
        for kind, x, y, *_ in self._items:
            xs.append(x)
            if kind == "band":
                ys += [y[0], y[1]]
            elif kind == "hist":
                ys.append(y)
                ys.append(np.zeros(1))
            else:
                ys.append(y)
        x_all = np.concatenate(xs) if xs else np.zeros(1)
        y_all = np.concatenate(ys) if ys else np.zeros(1)
        x_all, y_all = x_all[np.isfinite(x_all)], y_all[np.isfinite(y_all)]
        xlim = self.xlim or (float(x_all.min()), float(x_all.max()))
        ylim = self.ylim or (float(y_all.min()), float(y_all.max()))
        if xlim[1] <= xlim[0]:
            xlim = (xlim[0] - 0.5, xlim[0] + 0.5)
        if ylim[1] <= ylim[0]:
            ylim = (ylim[0] - 0.5, ylim[0] + 0.5)
        return xlim, ylim

    def render(self) -> str:
        top, right, bottom, left = self.margin
        pw, ph = self.width - left - right, self.height - top - bottom
        (x0, x1), (y0, y1) = self._limits()

        def sx(x):
            return left + (np.asarray(x) - x0) / (x1 - x0) * pw

        def sy(y):
            return top + ph - (np.asarray(y) - y0) / (y1 - y0) * ph

        def path(xp, yp):
            pts = [f"{_num(a)},{_num(b)}" for a, b in zip(xp, yp) if np.isfinite(a) and np.isfinite(b)]
            return "M" + " L".join(pts) if pts else ""

        out = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" height="{self.height}" '
            f'viewBox="0 0 {self.width} {self.height}" font-family="sans-serif" font-size="11">',
            f'<rect x="0" y="0" width="{self.width}" height="{self.height}" fill="white"/>',
        ]
        if self.title:
            out.append(f'<text x="{self.width / 2:.1f}" y="20" text-anchor="middle" font-size="13">'
                       f'{escape(self.title)}</text>')
        out.append(f'<g class="axes" stroke="black" stroke-width="1">'
                   f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}"/>'
                   f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}"/></g>')
        for t in nice_ticks(x0, x1):
            if x0 <= t <= x1:
                X = _num(float(sx(t)))
                out.append(f'<line class="tick" x1="{X}" y1="{top + ph}" x2="{X}" y2="{top + ph + 4}" stroke="black"/>'
                           f'<text x="{X}" y="{top + ph + 16}" text-anchor="middle">{_label(t)}</text>')
        for t in nice_ticks(y0, y1):
            if y0 <= t <= y1:
                Y = _num(float(sy(t)))
                out.append(f'<line class="tick" x1="{left - 4}" y1="{Y}" x2="{left}" y2="{Y}" stroke="black"/>'
                           f'<text x="{left - 6}" y="{Y}" text-anchor="end" dominant-baseline="middle">{_label(t)}</text>')
        if self.xlabel:
            out.append(f'<text x="{left + pw / 2:.1f}" y="{self.height - 12}" text-anchor="middle">'
                       f'{escape(self.xlabel)}</text>')
        if self.ylabel:
            cy = top + ph / 2
            out.append(f'<text x="14" y="{cy:.1f}" text-anchor="middle" transform="rotate(-90 14 {cy:.1f})">'
                       f'{escape(self.ylabel)}</text>')

        legend = []
        for i, (kind, x, y, label, color, extra) in enumerate(self._items):
            color = color or PALETTE[i % len(PALETTE)]
            attr = f' data-label="{escape(label)}"' if label else ""
            if kind == "line":
                out.append(f'<path class="series"{attr} d="{path(sx(x), sy(y))}" fill="none" '
                           f'stroke="{color}" stroke-width="{extra}"/>')
            elif kind == "band":
                lo, hi = y
                d = path(np.concatenate([sx(x), sx(x)[::-1]]), np.concatenate([sy(hi), sy(lo)[::-1]]))
                out.append(f'<path class="band"{attr} d="{d} Z" fill="{color}" fill-opacity="{extra}" stroke="none"/>')
            elif kind == "points":
                for a, b in zip(sx(x), sy(y)):
                    out.append(f'<circle class="point" cx="{_num(a)}" cy="{_num(b)}" r="{extra}" fill="{color}"/>')
            elif kind == "hist":
                base = float(sy(max(y0, 0.0)))
                for a, b, h in zip(x[:-1], x[1:], y):
                    top_y = float(sy(h))
                    out.append(f'<rect class="bar" x="{_num(float(sx(a)))}" y="{_num(top_y)}" '
                               f'width="{_num(float(sx(b) - sx(a)))}" height="{_num(base - top_y)}" '
                               f'fill="{color}" fill-opacity="0.6"/>')
            if label:
                legend.append((label, color))
        for k, (label, color) in enumerate(legend):
            ly = top + 10 + 14 * k
            out.append(f'<g class="legend"><rect x="{left + pw - 120}" y="{ly - 8}" width="10" height="10" '
                       f'fill="{color}"/><text x="{left + pw - 105}" y="{ly + 1}">{escape(label)}</text></g>')
        out.append("</svg>")
        return "\n".join(out) + "\n"
