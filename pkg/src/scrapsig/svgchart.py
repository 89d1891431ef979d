"""Minimal deterministic SVG charts: lines, log-log scatter, bars.

No external renderer; output is plain markup with fixed canvas geometry and
%.6g number formatting, so identical inputs produce byte-identical files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import DataError

WIDTH = 800
HEIGHT = 500
MARGIN = {"left": 70, "right": 70, "top": 50, "bottom": 55}

PALETTE = {
    "kg": "#1f77b4",
    "price": "#d62728",
    "anomaly": "#ff7f0e",
    "bar": "#1f77b4",
    "HighVolumeCommodity": "#1f77b4",
    "EmergingCommodity": "#2ca02c",
    "StableMidMarket": "#7f7f7f",
    "HighPriceNiche": "#9467bd",
}
FALLBACK_COLOR = "#17becf"


def _fmt(x: float) -> str:
    return f"{float(x):.6g}"


def nice_ticks(lo: float, hi: float, target: int = 5) -> list[float]:
    """Round tick positions covering [lo, hi] using a 1-2-5 step ladder."""
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise DataError("tick range must be finite")
    if hi < lo:
        lo, hi = hi, lo
    if hi == lo:
        hi = lo + 1.0
    raw_step = (hi - lo) / max(target, 1)
    mag = 10.0 ** math.floor(math.log10(raw_step))
    for mult in (1.0, 2.0, 5.0, 10.0):
        step = mult * mag
        if raw_step <= step:
            break
    first = math.floor(lo / step) * step
    ticks = []
    t = first
    while t <= hi + step * 1e-9:
        ticks.append(round(t, 12))
        t += step
    return ticks


@dataclass
class Canvas:
    """Accumulates SVG elements; plotting helpers map data to pixel space."""

    width: int = WIDTH
    height: int = HEIGHT
    elements: list[str] = field(default_factory=list)

    def add(self, markup: str) -> None:
        self.elements.append(markup)

    def line(self, x1, y1, x2, y2, stroke="#333", width=1.0) -> None:
        self.add(
            f'<line x1="{_fmt(x1)}" y1="{_fmt(y1)}" x2="{_fmt(x2)}" y2="{_fmt(y2)}" '
            f'stroke="{stroke}" stroke-width="{_fmt(width)}"/>'
        )

    def polyline(self, points, stroke, width=2.0, cls="") -> None:
        pts = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in points)
        cls_attr = f' class="{cls}"' if cls else ""
        self.add(
            f'<polyline{cls_attr} points="{pts}" fill="none" stroke="{stroke}" '
            f'stroke-width="{_fmt(width)}"/>'
        )

    def circle(self, cx, cy, r, fill, cls="") -> None:
        cls_attr = f' class="{cls}"' if cls else ""
        self.add(f'<circle{cls_attr} cx="{_fmt(cx)}" cy="{_fmt(cy)}" r="{_fmt(r)}" fill="{fill}"/>')

    def rect(self, x, y, w, h, fill, cls="") -> None:
        cls_attr = f' class="{cls}"' if cls else ""
        self.add(
            f'<rect{cls_attr} x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(w)}" '
            f'height="{_fmt(h)}" fill="{fill}"/>'
        )

    def text(self, x, y, content, size=12, anchor="middle", fill="#333", rotate=None) -> None:
        transform = f' transform="rotate({_fmt(rotate)} {_fmt(x)} {_fmt(y)})"' if rotate is not None else ""
        self.add(
            f'<text x="{_fmt(x)}" y="{_fmt(y)}" font-size="{_fmt(size)}" '
            f'font-family="sans-serif" text-anchor="{anchor}" fill="{fill}"{transform}>{_escape(content)}</text>'
        )

    def group_open(self, cls: str, extra: str = "") -> None:
        self.add(f'<g class="{cls}"{(" " + extra) if extra else ""}>')

    def group_close(self) -> None:
        self.add("</g>")

    def to_string(self) -> str:
        head = (
            '<?xml version="1.0" encoding="UTF-8"?>\n'
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" '
            f'height="{self.height}" viewBox="0 0 {self.width} {self.height}">\n'
            f'<rect x="0" y="0" width="{self.width}" height="{self.height}" fill="#ffffff"/>\n'
        )
        return head + "\n".join(self.elements) + "\n</svg>\n"


def _escape(text: str) -> str:
    return str(text).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


class _Scale:
    """Affine map from a data interval onto a pixel interval."""

    def __init__(self, lo: float, hi: float, px_lo: float, px_hi: float):
        if hi == lo:
            hi = lo + 1.0
        self.lo, self.hi = lo, hi
        self.px_lo, self.px_hi = px_lo, px_hi

    def __call__(self, v: float) -> float:
        frac = (v - self.lo) / (self.hi - self.lo)
        return self.px_lo + frac * (self.px_hi - self.px_lo)


def _plot_box():
    x0 = MARGIN["left"]
    x1 = WIDTH - MARGIN["right"]
    y0 = MARGIN["top"]
    y1 = HEIGHT - MARGIN["bottom"]
    return x0, x1, y0, y1


def dual_axis_chart(
    observed: list[tuple[int, float, float | None]],
    forecast: list[tuple[int, float, float]] | None = None,
    anomaly_years: list[int] | None = None,
    title: str = "",
) -> str:
    """Volume (left axis) and unit price (right axis) against year.

    Observed segments are solid; the forecast, when given, is rendered as a
    single dashed group whose polylines start at the last observed year.
    Anomalous observed years get circular volume markers.
    """
    if not observed:
        raise DataError("dual_axis_chart needs at least one observed point")
    observed = sorted(observed)
    forecast = sorted(forecast or [])
    anomaly_years = set(anomaly_years or [])

    years = [p[0] for p in observed] + [p[0] for p in forecast]
    kgs = [p[1] for p in observed] + [p[1] for p in forecast]
    prices = [p[2] for p in observed if p[2] is not None] + [p[2] for p in forecast]

    x0, x1, y0, y1 = _plot_box()
    sx = _Scale(min(years), max(years), x0, x1)
    sy_kg = _Scale(0.0, max(kgs) if kgs else 1.0, y1, y0)
    sy_pr = _Scale(0.0, max(prices) if prices else 1.0, y1, y0)

    cv = Canvas()
    if title:
        cv.text(WIDTH / 2, MARGIN["top"] - 20, title, size=15)

    # axes and ticks
    cv.line(x0, y1, x1, y1)
    cv.line(x0, y0, x0, y1, stroke=PALETTE["kg"])
    cv.line(x1, y0, x1, y1, stroke=PALETTE["price"])
    for year in sorted(set(int(y) for y in years)):
        px = sx(year)
        cv.line(px, y1, px, y1 + 4)
        cv.text(px, y1 + 18, str(year), size=10)
    for t in nice_ticks(0.0, sy_kg.hi):
        cv.line(x0 - 4, sy_kg(t), x0, sy_kg(t), stroke=PALETTE["kg"])
        cv.text(x0 - 8, sy_kg(t) + 4, _fmt(t), size=10, anchor="end", fill=PALETTE["kg"])
    for t in nice_ticks(0.0, sy_pr.hi):
        cv.line(x1, sy_pr(t), x1 + 4, sy_pr(t), stroke=PALETTE["price"])
        cv.text(x1 + 8, sy_pr(t) + 4, _fmt(t), size=10, anchor="start", fill=PALETTE["price"])
    cv.text(x0 - 52, (y0 + y1) / 2, "kg", size=12, fill=PALETTE["kg"], rotate=-90)
    cv.text(x1 + 52, (y0 + y1) / 2, "USD/kg", size=12, fill=PALETTE["price"], rotate=90)

    cv.polyline([(sx(y), sy_kg(v)) for y, v, _ in observed], PALETTE["kg"], cls="observed-kg")
    priced = [(y, p) for y, _, p in observed if p is not None]
    if priced:
        cv.polyline([(sx(y), sy_pr(p)) for y, p in priced], PALETTE["price"], cls="observed-price")

    if forecast:
        last_year, last_kg, _ = observed[-1]
        last_price = priced[-1][1] if priced else None
        cv.group_open("forecast", 'stroke-dasharray="6 4"')
        kg_pts = [(sx(last_year), sy_kg(last_kg))] if forecast[0][0] != last_year else []
        cv.polyline(kg_pts + [(sx(y), sy_kg(v)) for y, v, _ in forecast], PALETTE["kg"], cls="forecast-kg")
        pr_pts = [(sx(last_year), sy_pr(last_price))] if last_price is not None and forecast[0][0] != last_year else []
        cv.polyline(pr_pts + [(sx(y), sy_pr(p)) for y, _, p in forecast], PALETTE["price"], cls="forecast-price")
        cv.group_close()

    for year, kg, _ in observed:
        if year in anomaly_years:
            cv.circle(sx(year), sy_kg(kg), 5, PALETTE["anomaly"], cls="anomaly")
    return cv.to_string()


def scatter_loglog(
    points: list[tuple[float, float, str]],
    title: str = "",
    x_label: str = "average kg (log)",
    y_label: str = "average USD/kg (log)",
) -> str:
    """Scatter of (x, y, class label) on log10-log10 axes.

    Decade grid lines span the data; non-positive coordinates cannot be
    placed on a log axis and are skipped.
    """
    usable = [(x, y, c) for x, y, c in points if x > 0 and y > 0]
    x0, x1, y0, y1 = _plot_box()
    cv = Canvas()
    if title:
        cv.text(WIDTH / 2, MARGIN["top"] - 20, title, size=15)
    cv.line(x0, y1, x1, y1)
    cv.line(x0, y0, x0, y1)
    cv.text((x0 + x1) / 2, HEIGHT - 12, x_label, size=12)
    cv.text(x0 - 52, (y0 + y1) / 2, y_label, size=12, rotate=-90)

    if usable:
        lx = [math.log10(x) for x, _, _ in usable]
        ly = [math.log10(y) for _, y, _ in usable]
        sx = _Scale(math.floor(min(lx)), math.ceil(max(lx)), x0, x1)
        sy = _Scale(math.floor(min(ly)), math.ceil(max(ly)), y1, y0)
        for d in range(int(sx.lo), int(sx.hi) + 1):
            cv.line(sx(d), y0, sx(d), y1, stroke="#dddddd", width=0.5)
            cv.text(sx(d), y1 + 18, f"1e{d}", size=10)
        for d in range(int(sy.lo), int(sy.hi) + 1):
            cv.line(x0, sy(d), x1, sy(d), stroke="#dddddd", width=0.5)
            cv.text(x0 - 8, sy(d) + 4, f"1e{d}", size=10, anchor="end")
        seen: list[str] = []
        for x, y, cls in usable:
            color = PALETTE.get(cls, FALLBACK_COLOR)
            cv.circle(sx(math.log10(x)), sy(math.log10(y)), 4, color, cls=cls)
            if cls not in seen:
                seen.append(cls)
        for i, cls in enumerate(seen):
            ly_px = MARGIN["top"] + 14 * i
            cv.circle(x1 - 150, ly_px, 4, PALETTE.get(cls, FALLBACK_COLOR))
            cv.text(x1 - 140, ly_px + 4, cls, size=10, anchor="start")
    return cv.to_string()


def hbar_chart(labels: list[str], values: list[float], title: str = "") -> str:
    """Horizontal bars, top-to-bottom in the given order, sized by |value|."""
    if len(labels) != len(values):
        raise DataError("labels and values must align")
    x0, x1, y0, y1 = _plot_box()
    x0 += 80  # room for category labels
    cv = Canvas()
    if title:
        cv.text(WIDTH / 2, MARGIN["top"] - 20, title, size=15)
    cv.line(x0, y0, x0, y1)
    cv.line(x0, y1, x1, y1)
    if labels:
        top = max(max(abs(v) for v in values), 1e-12)
        sx = _Scale(0.0, top, x0, x1)
        for t in nice_ticks(0.0, top):
            cv.line(sx(t), y1, sx(t), y1 + 4)
            cv.text(sx(t), y1 + 18, _fmt(t), size=10)
        slot = (y1 - y0) / len(labels)
        bar_h = slot * 0.6
        for i, (label, value) in enumerate(zip(labels, values)):
            cy = y0 + i * slot + slot / 2
            cv.rect(x0, cy - bar_h / 2, sx(abs(value)) - x0, bar_h, PALETTE["bar"], cls="bar")
            cv.text(x0 - 8, cy + 4, label, size=10, anchor="end")
            cv.text(sx(abs(value)) + 6, cy + 4, _fmt(value), size=9, anchor="start")
    return cv.to_string()


def bar_chart(labels: list[str], values: list[float], title: str = "") -> str:
    """Vertical bars, one per label, sized against the max |value|."""
    if len(labels) != len(values):
        raise DataError("labels and values must align")
    x0, x1, y0, y1 = _plot_box()
    cv = Canvas()
    if title:
        cv.text(WIDTH / 2, MARGIN["top"] - 20, title, size=15)
    cv.line(x0, y1, x1, y1)
    cv.line(x0, y0, x0, y1)
    if labels:
        top = max(max(abs(v) for v in values), 1e-12)
        sy = _Scale(0.0, top, y1, y0)
        for t in nice_ticks(0.0, top):
            cv.line(x0 - 4, sy(t), x0, sy(t))
            cv.text(x0 - 8, sy(t) + 4, _fmt(t), size=10, anchor="end")
        slot = (x1 - x0) / len(labels)
        bar_w = slot * 0.6
        for i, (label, value) in enumerate(zip(labels, values)):
            left = x0 + i * slot + (slot - bar_w) / 2
            h = y1 - sy(abs(value))
            cv.rect(left, sy(abs(value)), bar_w, h, PALETTE["bar"], cls="bar")
            cv.text(x0 + i * slot + slot / 2, y1 + 16, label, size=9, rotate=20)
            cv.text(x0 + i * slot + slot / 2, sy(abs(value)) - 4, _fmt(value), size=9)
    return cv.to_string()
