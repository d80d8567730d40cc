"""Deterministic synthetic charts with exact annotations.

Plot marks are rasterized without anti-aliasing so every mark pixel carries
its series colour exactly; legend patches use the same colours. Tick marks
land on integer pixels, so the axis oracle maps data to pixels exactly and
the only geometric error is the rounding of marks to whole pixels.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .errors import LayoutOverflow
from .types import (
    AnnotatedChart,
    Axis,
    AxisTick,
    BoxStats,
    ChartType,
    DataSeries,
    LegendPair,
    TextBox,
    TextRole,
)

RGB = Tuple[int, int, int]

BASE_PALETTE: Tuple[RGB, ...] = (
    (31, 119, 180),
    (255, 127, 14),
    (44, 160, 44),
    (214, 39, 40),
    (148, 103, 189),
    (140, 86, 75),
    (227, 119, 194),
    (23, 190, 207),
    (188, 189, 34),
    (0, 0, 140),
)
BACKGROUNDS: Tuple[RGB, ...] = ((255, 255, 255), (250, 250, 245), (245, 248, 255))
MIN_COLOR_DISTANCE = 60.0

SERIES_NAMES = ("alpha", "beta", "gamma", "delta", "omega", "sigma", "north", "south",
                "east", "west", "control", "treated", "model", "data", "fit", "base")
CATEGORY_NAMES = ("A", "B", "C", "D", "E", "F", "G", "H", "Mon", "Tue", "Wed", "Thu",
                  "Fri", "2019", "2020", "2021", "2022", "Q1", "Q2", "Q3", "Q4")
TITLE_WORDS = ("Results", "Growth", "Signal", "Response", "Yield", "Trend", "Count",
               "Score", "Rate", "Level")
AXIS_WORDS = ("Time", "Dose", "Value", "Size", "Index", "Year", "Group", "Mass", "Load")

TICK_LEN = 3
PAD = 4
PATCH = 8
SCATTER_MIN_SEPARATION = 20.0
BOX_MIN_GAP = 10


@dataclass(frozen=True)
class Style:
    palette: Tuple[RGB, ...]
    line_width: int = 2
    marker_radius: int = 3
    font_size: int = 10
    legend_position: str = "right"
    background: RGB = (255, 255, 255)


@dataclass(frozen=True)
class ChartSpec:
    chart_type: ChartType
    n_series: int
    n_points_per_series: int
    style: Style
    rng_seed: int
    canvas: Tuple[int, int] = (256, 256)

    def __post_init__(self):
        if not 1 <= self.n_series <= 4:
            raise ValueError("n_series must be in [1, 4]")
        if not 2 <= self.n_points_per_series <= 20:
            raise ValueError("n_points_per_series must be in [2, 20]")
        if self.canvas[0] < 128 or self.canvas[1] < 128:
            raise ValueError("canvas must be at least 128x128")
        if len(self.style.palette) < self.n_series:
            raise ValueError("palette shorter than n_series")
        if palette_min_distance(self.style.palette) < MIN_COLOR_DISTANCE:
            raise ValueError("palette colours too close")


def color_distance(a: Sequence[float], b: Sequence[float]) -> float:
    return float(np.linalg.norm(np.asarray(a, float) - np.asarray(b, float)))


def palette_min_distance(palette: Sequence[RGB]) -> float:
    if len(palette) < 2:
        return math.inf
    return min(color_distance(a, b) for i, a in enumerate(palette) for b in palette[i + 1:])


# (series range, points range, cap on series * points)
_COUNTS = {
    ChartType.LINE: ((1, 4), (2, 20), 80),
    ChartType.SCATTER: ((1, 3), (2, 12), 30),
    ChartType.BAR_VERTICAL: ((1, 3), (2, 6), 10),
    ChartType.BAR_HORIZONTAL: ((1, 3), (2, 6), 10),
    ChartType.BOX_VERTICAL: ((1, 2), (2, 5), 6),
}


def sample_spec(chart_type: ChartType, rng_seed: int, canvas: Tuple[int, int] = (256, 256)) -> ChartSpec:
    """Draw a renderable spec; deterministic in (chart_type, rng_seed).

    For box charts ``n_points_per_series`` counts boxes.
    """
    chart_type = ChartType(chart_type)
    rng = np.random.default_rng([int(rng_seed) & 0xFFFFFFFFFFFFFFFF, chart_type.index, 1])
    (s_lo, s_hi), (p_lo, p_hi), cap = _COUNTS[chart_type]
    while True:
        n_series = int(rng.integers(s_lo, s_hi + 1))
        n_points = int(rng.integers(p_lo, p_hi + 1))
        if n_series * n_points <= cap:
            break
    background = BACKGROUNDS[int(rng.integers(len(BACKGROUNDS)))]
    while True:
        idx = rng.choice(len(BASE_PALETTE), size=n_series, replace=False)
        palette = tuple(BASE_PALETTE[i] for i in idx)
        if palette_min_distance(palette) >= MIN_COLOR_DISTANCE and all(
            color_distance(c, background) >= MIN_COLOR_DISTANCE for c in palette
        ):
            break
    legend = "top" if n_series <= 2 and rng.random() < 0.3 else "right"
    style = Style(
        palette=palette,
        line_width=int(rng.integers(2, 4)),
        marker_radius=int(rng.integers(3, 5)),
        font_size=int(rng.integers(9, 12)),
        legend_position=legend,
        background=background,
    )
    return ChartSpec(chart_type, n_series, n_points, style, int(rng_seed), tuple(canvas))


# ---------------------------------------------------------------- helpers

@functools.lru_cache(maxsize=None)
def _font(size: int):
    for name in ("DejaVuSans.ttf", "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf"):
        try:
            return ImageFont.truetype(name, size)
        except OSError:
            continue
    return ImageFont.load_default(size)


def _fmt(v: float) -> str:
    s = f"{v:g}"
    return "0" if s == "-0" else s


@dataclass
class _ContAxis:
    values: List[float]
    labels: List[str]

    @property
    def lo(self) -> float:
        return self.values[0]

    @property
    def hi(self) -> float:
        return self.values[-1]

    @property
    def n_int(self) -> int:
        return len(self.values) - 1

    @property
    def decimals(self) -> int:
        step = self.values[1] - self.values[0]
        return max(0, 3 - int(math.floor(math.log10(step))))


def _nice_axis(rng: np.random.Generator, from_zero: bool) -> _ContAxis:
    step = float(rng.choice([1.0, 2.0, 2.5, 5.0])) * 10.0 ** int(rng.integers(-1, 3))
    n_int = int(rng.integers(4, 6))
    start = 0.0 if from_zero else step * int(rng.integers(-2, 5))
    values = [round(start + i * step, 10) for i in range(n_int + 1)]
    return _ContAxis(values, [_fmt(v) for v in values])


def _spread_fractions(rng: np.random.Generator, n: int, lo_range=(0.05, 0.3), hi_range=(0.8, 0.95)) -> np.ndarray:
    """n fractions in [lo, hi] whose min and max hit lo and hi exactly."""
    lo = rng.uniform(*lo_range)
    hi = rng.uniform(*hi_range)
    u = rng.random(n)
    if np.ptp(u) == 0:
        u = np.linspace(0, 1, n)
    u = (u - u.min()) / np.ptp(u)
    return lo + (hi - lo) * u


class _Canvas:
    def __init__(self, spec: ChartSpec):
        h, w = spec.canvas
        self.h, self.w = h, w
        self.img = Image.new("RGB", (w, h), spec.style.background)
        self.draw = ImageDraw.Draw(self.img)
        self.font = _font(spec.style.font_size)
        self.text_boxes: List[TextBox] = []

    def measure(self, text: str) -> Tuple[int, int, int, int]:
        return self.draw.textbbox((0, 0), text, font=self.font)

    def size(self, text: str) -> Tuple[int, int]:
        l, t, r, b = self.measure(text)
        return r - l, b - t

    def text(self, text: str, x: float, y: float, role: TextRole) -> int:
        """Draw text with its ink box's top-left at (x, y); returns its id."""
        l, t, r, b = self.measure(text)
        ox, oy = int(round(x)) - l, int(round(y)) - t
        self.draw.text((ox, oy), text, fill=(0, 0, 0), font=self.font)
        box = (ox + l, oy + t, ox + r, oy + b)
        return self._add_box(box, text, role)

    def vertical_text(self, text: str, x: float, y: float, role: TextRole) -> int:
        l, t, r, b = self.measure(text)
        mask = Image.new("L", (r - l, b - t), 0)
        ImageDraw.Draw(mask).text((-l, -t), text, fill=255, font=self.font)
        mask = mask.rotate(90, expand=True)
        ox, oy = int(round(x)), int(round(y))
        self.img.paste((0, 0, 0), (ox, oy), mask)
        box = (ox, oy, ox + mask.width, oy + mask.height)
        return self._add_box(box, text, role)

    def _add_box(self, box, text: str, role: TextRole) -> int:
        x0, y0, x1, y1 = box
        if x0 < 0 or y0 < 0 or x1 > self.w or y1 > self.h:
            raise LayoutOverflow(f"text {text!r} does not fit the canvas")
        tid = len(self.text_boxes)
        poly = ((float(x0), float(y0)), (float(x1), float(y0)), (float(x1), float(y1)), (float(x0), float(y1)))
        self.text_boxes.append(TextBox(tid, poly, text, role))
        return tid


# ---------------------------------------------------------------- generator

def generate_chart(spec: ChartSpec) -> AnnotatedChart:
    ct = spec.chart_type
    style = spec.style
    rng = np.random.default_rng([spec.rng_seed & 0xFFFFFFFFFFFFFFFF, ct.index, 2])
    cv = _Canvas(spec)
    h, w = cv.h, cv.w

    names = [str(s) for s in rng.choice(SERIES_NAMES, size=spec.n_series, replace=False)]
    title = f"{rng.choice(TITLE_WORDS)} by {rng.choice(AXIS_WORDS)}"
    x_title, y_title = (str(s) for s in rng.choice(AXIS_WORDS, size=2, replace=False))

    cat_axis = {ChartType.BAR_VERTICAL: Axis.X, ChartType.BOX_VERTICAL: Axis.X,
                ChartType.BAR_HORIZONTAL: Axis.Y}.get(ct)
    n_cat = spec.n_points_per_series
    categories = [str(c) for c in rng.choice(CATEGORY_NAMES, size=n_cat, replace=False)] if cat_axis else []
    bar_like = ct.is_bar or ct == ChartType.BOX_VERTICAL
    x_axis = None if cat_axis == Axis.X else _nice_axis(rng, from_zero=ct == ChartType.BAR_HORIZONTAL)
    y_axis = None if cat_axis == Axis.Y else _nice_axis(rng, from_zero=bar_like and ct != ChartType.BOX_VERTICAL)
    x_labels = categories if cat_axis == Axis.X else x_axis.labels
    y_labels = categories if cat_axis == Axis.Y else y_axis.labels

    # ---- layout
    font_h = cv.size("Ag")[1]
    title_w, title_h = cv.size(title)
    legend_sizes = [cv.size(n) for n in names]
    entry_w = [PATCH + 4 + lw for lw, _ in legend_sizes]
    entry_h = max(PATCH, max(lh for _, lh in legend_sizes))
    top = PAD + title_h + PAD + 2
    right_margin = PAD + cv.size(x_labels[-1])[0] // 2 + 1
    if style.legend_position == "top":
        top += entry_h + PAD
        if sum(entry_w) + 10 * (len(names) - 1) > w - 2 * PAD:
            raise LayoutOverflow("legend row wider than canvas")
    else:
        right_margin = max(right_margin, PAD + max(entry_w) + PAD)
    ytick_w = max(cv.size(t)[0] for t in y_labels)
    xtick_h = max(cv.size(t)[1] for t in x_labels)
    left = PAD + font_h + PAD + ytick_w + 2 + TICK_LEN
    bottom_margin = TICK_LEN + 2 + xtick_h + PAD + font_h + PAD
    plot_w = w - left - right_margin
    plot_h = h - top - bottom_margin
    if plot_w < 64 or plot_h < 64:
        raise LayoutOverflow(f"plot area {plot_w}x{plot_h} too small")
    if x_axis is not None:
        plot_w = (plot_w // x_axis.n_int) * x_axis.n_int
    if y_axis is not None:
        plot_h = (plot_h // y_axis.n_int) * y_axis.n_int
    px0, py1 = left, top + plot_h
    px1, py0 = px0 + plot_w, py1 - plot_h

    def map_x(v):
        return px0 + (v - x_axis.lo) / (x_axis.hi - x_axis.lo) * plot_w

    def map_y(v):
        return py1 - (v - y_axis.lo) / (y_axis.hi - y_axis.lo) * plot_h

    if cat_axis == Axis.X:
        slot = plot_w / n_cat
        cat_px = [px0 + (i + 0.5) * slot for i in range(n_cat)]
    elif cat_axis == Axis.Y:
        slot = plot_h / n_cat
        cat_px = [py0 + (i + 0.5) * slot for i in range(n_cat)]

    # ---- data + geometry
    series: List[DataSeries] = []
    colors = style.palette[: spec.n_series]
    if ct == ChartType.LINE:
        n = spec.n_points_per_series
        a, b = rng.uniform(0.0, 0.1), rng.uniform(0.9, 1.0)
        fx = np.linspace(a, b, n)
        xs = [round(x_axis.lo + f * (x_axis.hi - x_axis.lo), x_axis.decimals) for f in fx]
        for si, name in enumerate(names):
            walk = np.cumsum(rng.normal(size=n))
            walk = walk + np.linspace(0, rng.normal() * 2, n)
            fy = _rescale(walk, rng)
            ys = [round(y_axis.lo + f * (y_axis.hi - y_axis.lo), y_axis.decimals) for f in fy]
            geom = tuple((float(round(map_x(x))), float(round(map_y(y)))) for x, y in zip(xs, ys))
            series.append(DataSeries(name, ct.series_kind, tuple(xs), tuple(ys), geom))
    elif ct == ChartType.SCATTER:
        placed: List[Tuple[float, float]] = []
        for si, name in enumerate(names):
            pts = []
            for _ in range(spec.n_points_per_series):
                for _attempt in range(2000):
                    fx, fy = rng.uniform(0.05, 0.95, size=2)
                    x = round(x_axis.lo + fx * (x_axis.hi - x_axis.lo), x_axis.decimals)
                    y = round(y_axis.lo + fy * (y_axis.hi - y_axis.lo), y_axis.decimals)
                    g = (float(round(map_x(x))), float(round(map_y(y))))
                    if all(math.dist(g, q) >= SCATTER_MIN_SEPARATION for q in placed):
                        break
                else:
                    raise LayoutOverflow("cannot place scatter points apart")
                placed.append(g)
                pts.append((x, y, g))
            pts.sort()
            series.append(DataSeries(name, ct.series_kind, tuple(p[0] for p in pts),
                                     tuple(p[1] for p in pts), tuple(p[2] for p in pts)))
    elif ct.is_bar:
        vert = ct == ChartType.BAR_VERTICAL
        group = slot * 0.8
        per = group / spec.n_series
        gap = max(3, int(per * 0.2))
        bar_w = int(per) - gap
        if bar_w < 6:
            raise LayoutOverflow("bars too narrow")
        val_axis = y_axis if vert else x_axis
        for si, name in enumerate(names):
            fr = _spread_fractions(rng, n_cat, lo_range=(0.15, 0.3))
            vals = [round(val_axis.lo + f * (val_axis.hi - val_axis.lo), val_axis.decimals) for f in fr]
            geom = []
            for ci, v in enumerate(vals):
                start = int(round(cat_px[ci] - group / 2 + si * per + gap / 2))
                if vert:
                    geom.append((float(start), float(round(map_y(v))), float(start + bar_w), float(py1)))
                else:
                    geom.append((float(px0), float(start), float(round(map_x(v))), float(start + bar_w)))
            series.append(DataSeries(name, ct.series_kind, tuple(categories), tuple(vals), tuple(geom)))
    else:
        group = slot * 0.8
        per = group / spec.n_series
        box_w = max(6, int(per * 0.6))
        for si, name in enumerate(names):
            stats, geom = [], []
            for ci in range(n_cat):
                for _attempt in range(2000):
                    fr = np.sort(rng.uniform(0.05, 0.95, size=5))
                    vals = [round(y_axis.lo + f * (y_axis.hi - y_axis.lo), y_axis.decimals) for f in fr]
                    ys = [float(round(map_y(v))) for v in vals]
                    if all(ys[i] - ys[i + 1] >= BOX_MIN_GAP for i in range(4)):
                        break
                else:
                    raise LayoutOverflow("cannot space box whiskers")
                cx = float(round(cat_px[ci] - group / 2 + (si + 0.5) * per))
                stats.append(BoxStats(*vals))
                geom.append((cx, *ys))
            series.append(DataSeries(name, ct.series_kind, tuple(categories), tuple(stats), tuple(geom)))

    # ---- marks
    d = cv.draw
    for s, color in zip(series, colors):
        if ct == ChartType.LINE:
            d.line([tuple(g) for g in s.geometry], fill=color, width=style.line_width)
        elif ct == ChartType.SCATTER:
            r = style.marker_radius
            for gx, gy in s.geometry:
                d.ellipse([gx - r, gy - r, gx + r, gy + r], fill=color)
        elif ct.is_bar:
            for x0, y0, x1, y1 in s.geometry:
                d.rectangle([x0, y0, x1 - 1, y1 - 1], fill=color)
        else:
            lw = style.line_width
            for cx, y_min, y_q1, y_med, y_q3, y_max in s.geometry:
                half = box_w // 2
                d.rectangle([cx - half, y_q3, cx + half, y_q1], outline=color, width=lw)
                d.line([(cx - half, y_med), (cx + half, y_med)], fill=color, width=lw)
                d.line([(cx, y_max), (cx, y_q3)], fill=color, width=lw)
                d.line([(cx, y_q1), (cx, y_min)], fill=color, width=lw)
                d.line([(cx - half // 2, y_max), (cx + half // 2, y_max)], fill=color, width=lw)
                d.line([(cx - half // 2, y_min), (cx + half // 2, y_min)], fill=color, width=lw)

    # ---- axes, ticks, labels
    black = (0, 0, 0)
    d.line([(px0, py1), (px1, py1)], fill=black, width=1)
    d.line([(px0, py0), (px0, py1)], fill=black, width=1)
    ticks: List[AxisTick] = []
    x_tick_px = cat_px if cat_axis == Axis.X else [px0 + i * plot_w // x_axis.n_int for i in range(x_axis.n_int + 1)]
    y_tick_px = cat_px if cat_axis == Axis.Y else [py1 - i * plot_h // y_axis.n_int for i in range(y_axis.n_int + 1)]
    for label, tx in zip(x_labels, x_tick_px):
        tx_i = int(round(tx))
        d.line([(tx_i, py1), (tx_i, py1 + TICK_LEN)], fill=black)
        lw_, _ = cv.size(label)
        tid = cv.text(label, tx_i - lw_ / 2, py1 + TICK_LEN + 2, TextRole.TICK_LABEL)
        ticks.append(AxisTick(Axis.X, (float(tx_i) if cat_axis != Axis.X else float(tx), float(py1)), tid))
    for label, ty in zip(y_labels, y_tick_px):
        ty_i = int(round(ty))
        d.line([(px0 - TICK_LEN, ty_i), (px0, ty_i)], fill=black)
        lw_, lh_ = cv.size(label)
        tid = cv.text(label, px0 - TICK_LEN - 2 - lw_, ty_i - lh_ / 2, TextRole.TICK_LABEL)
        ticks.append(AxisTick(Axis.Y, (float(px0), float(ty_i) if cat_axis != Axis.Y else float(ty)), tid))

    cv.text(title, max(PAD, (w - title_w) / 2), PAD, TextRole.CHART_TITLE)
    xt_w, _ = cv.size(x_title)
    cv.text(x_title, px0 + (plot_w - xt_w) / 2, h - PAD - font_h, TextRole.AXIS_TITLE)
    yt_w, _ = cv.size(y_title)
    cv.vertical_text(y_title, PAD, py0 + max(0, (plot_h - yt_w) / 2), TextRole.AXIS_TITLE)

    # ---- legend
    legend: List[LegendPair] = []
    if style.legend_position == "top":
        lx = px0 + max(0, (plot_w - sum(entry_w) - 10 * (len(names) - 1)) / 2)
        ly = PAD + title_h + PAD + 2
        for name, color, ew in zip(names, colors, entry_w):
            legend.append(_legend_entry(cv, name, color, lx, ly, entry_h))
            lx += ew + 10
    else:
        lx = w - right_margin + PAD
        ly = py0
        for name, color in zip(names, colors):
            legend.append(_legend_entry(cv, name, color, lx, ly, entry_h))
            ly += entry_h + 4

    image = np.array(cv.img, dtype=np.uint8)
    return AnnotatedChart(
        image=image,
        chart_type=ct,
        data_series=tuple(series),
        text_boxes=tuple(cv.text_boxes),
        axis_ticks=tuple(ticks),
        legend_pairs=tuple(legend),
        plot_bbox=(float(px0), float(py0), float(px1), float(py1)),
        image_size=(h, w),
        chart_id=f"{ct.value}-{spec.rng_seed:06d}",
    )


def _rescale(walk: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    lo = rng.uniform(0.05, 0.3)
    hi = rng.uniform(0.8, 0.95)
    if np.ptp(walk) == 0:
        walk = np.linspace(0, 1, len(walk))
    return lo + (hi - lo) * (walk - walk.min()) / np.ptp(walk)


def _legend_entry(cv: _Canvas, name: str, color: RGB, lx: float, ly: float, entry_h: int) -> LegendPair:
    lx, ly = int(round(lx)), int(round(ly))
    py = ly + (entry_h - PATCH) // 2
    cv.draw.rectangle([lx, py, lx + PATCH - 1, py + PATCH - 1], fill=color)
    _, th = cv.size(name)
    tid = cv.text(name, lx + PATCH + 4, ly + (entry_h - th) / 2, TextRole.LEGEND_LABEL)
    return LegendPair(tid, (float(lx), float(py), float(lx + PATCH), float(py + PATCH)))


def generate(chart_type: ChartType, seed: int, canvas: Tuple[int, int] = (256, 256)) -> AnnotatedChart:
    return generate_chart(sample_spec(chart_type, seed, canvas))
