"""Pixel <-> data mapping from the axis-tick oracle, and conversion of
reconstructed components into named data series."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import InsufficientTicks, NonNumericTick
from ..types import (
    AnnotatedChart,
    Axis,
    BoxStats,
    ChartType,
    DataSeries,
    SeriesKind,
)


def parse_number(text: str) -> float:
    cleaned = text.strip().replace(",", "").replace("−", "-").rstrip("%")
    return float(cleaned)


def _piecewise(x: np.ndarray, xp: np.ndarray, fp: np.ndarray) -> np.ndarray:
    """np.interp with linear extrapolation past both end knots."""
    x = np.asarray(x, dtype=float)
    out = np.interp(x, xp, fp)
    if len(xp) >= 2:
        lo_slope = (fp[1] - fp[0]) / (xp[1] - xp[0])
        hi_slope = (fp[-1] - fp[-2]) / (xp[-1] - xp[-2])
        out = np.where(x < xp[0], fp[0] + (x - xp[0]) * lo_slope, out)
        out = np.where(x > xp[-1], fp[-1] + (x - xp[-1]) * hi_slope, out)
    return out


def _misfit(x: np.ndarray, y: np.ndarray) -> float:
    """1 - R^2 of a least-squares line through (x, y)."""
    if np.ptp(y) == 0:
        return 0.0
    coef = np.polyfit(x, y, 1)
    resid = y - np.polyval(coef, x)
    return float(np.sum(resid**2) / np.sum((y - y.mean()) ** 2))


@dataclass(frozen=True)
class AxisMap:
    """Piecewise-linear map between pixel positions and tick values."""

    pixels: Tuple[float, ...]
    values: Tuple[float, ...]
    scale: str = "linear"

    @classmethod
    def fit(cls, pixels: Sequence[float], values: Sequence[float]) -> "AxisMap":
        px = np.asarray(pixels, dtype=float)
        vals = np.asarray(values, dtype=float)
        if len(px) < 2:
            raise InsufficientTicks(f"need >= 2 ticks, got {len(px)}")
        order = np.argsort(px, kind="stable")
        px, vals = px[order], vals[order]
        # merge ticks sharing a pixel position
        uniq, inv = np.unique(px, return_inverse=True)
        if len(uniq) < 2:
            raise InsufficientTicks("ticks collapse onto one pixel")
        merged = np.array([vals[inv == i].mean() for i in range(len(uniq))])
        scale = "linear"
        if len(uniq) >= 3 and np.all(merged > 0):
            lin = _misfit(uniq, merged)
            log = _misfit(uniq, np.log10(merged))
            if log < 0.5 * lin:
                scale = "log"
        return cls(tuple(uniq.tolist()), tuple(merged.tolist()), scale)

    def _fp(self) -> np.ndarray:
        v = np.asarray(self.values, dtype=float)
        return np.log10(v) if self.scale == "log" else v

    def to_value(self, px):
        out = _piecewise(px, np.asarray(self.pixels), self._fp())
        return 10.0**out if self.scale == "log" else out

    def to_pixel(self, value):
        fp = self._fp()
        v = np.asarray(value, dtype=float)
        if self.scale == "log":
            v = np.log10(v)
        px = np.asarray(self.pixels)
        order = np.argsort(fp, kind="stable")
        return _piecewise(v, fp[order], px[order])

    @property
    def units_per_pixel(self) -> float:
        fp = self._fp()
        return float(abs(fp[-1] - fp[0]) / abs(self.pixels[-1] - self.pixels[0]))


@dataclass(frozen=True)
class CategoricalAxis:
    pixels: Tuple[float, ...]
    labels: Tuple[str, ...]

    def label_at(self, px: float) -> str:
        d = np.abs(np.asarray(self.pixels) - px)
        return self.labels[int(np.argmin(d))]

    def pixel_of(self, label: str) -> float:
        return self.pixels[self.labels.index(label)]


def _tick_coord(axis: Axis, point) -> float:
    return float(point[0] if axis == Axis.X else point[1])


def continuous_axis(chart: AnnotatedChart, axis: Axis) -> AxisMap:
    ticks = chart.ticks_for(axis)
    if len(ticks) < 2:
        raise InsufficientTicks(f"{axis.value}-axis has {len(ticks)} ticks")
    pixels, values = [], []
    for t in ticks:
        text = chart.text_box(t.label_id).text
        try:
            values.append(parse_number(text))
        except ValueError as exc:
            raise NonNumericTick(f"{axis.value}-axis tick {text!r}") from exc
        pixels.append(_tick_coord(axis, t.point))
    return AxisMap.fit(pixels, values)


def categorical_axis(chart: AnnotatedChart, axis: Axis) -> CategoricalAxis:
    ticks = chart.ticks_for(axis)
    if not ticks:
        raise InsufficientTicks(f"{axis.value}-axis has no category ticks")
    ticks = sorted(ticks, key=lambda t: _tick_coord(axis, t.point))
    return CategoricalAxis(
        tuple(_tick_coord(axis, t.point) for t in ticks),
        tuple(chart.text_box(t.label_id).text for t in ticks),
    )


def category_axis_of(chart_type: ChartType) -> Optional[Axis]:
    if chart_type in (ChartType.BAR_VERTICAL, ChartType.BOX_VERTICAL):
        return Axis.X
    if chart_type == ChartType.BAR_HORIZONTAL:
        return Axis.Y
    return None


@dataclass(frozen=True)
class ChartAxes:
    """The pair of axis maps that convert component geometry to data."""

    x: object
    y: object

    @classmethod
    def from_chart(cls, chart: AnnotatedChart, chart_type: Optional[ChartType] = None) -> "ChartAxes":
        chart_type = chart_type or chart.chart_type
        cat = category_axis_of(chart_type)
        x = categorical_axis(chart, Axis.X) if cat == Axis.X else continuous_axis(chart, Axis.X)
        y = categorical_axis(chart, Axis.Y) if cat == Axis.Y else continuous_axis(chart, Axis.Y)
        return cls(x, y)


def element_to_data(geom: Sequence[float], kind: SeriesKind, axes: ChartAxes,
                    chart_type: ChartType):
    """Convert one element's pixel geometry into an ``(x, y)`` data pair."""
    if kind in (SeriesKind.CONTINUOUS, SeriesKind.POINTS):
        px, py = geom
        return float(axes.x.to_value(px)), float(axes.y.to_value(py))
    if kind == SeriesKind.BARS:
        x0, y0, x1, y1 = geom
        if chart_type == ChartType.BAR_HORIZONTAL:
            # categorical axis on the left: the value sits on the right edge
            return axes.y.label_at(0.5 * (y0 + y1)), float(axes.x.to_value(x1))
        return axes.x.label_at(0.5 * (x0 + x1)), float(axes.y.to_value(y0))
    if kind == SeriesKind.BOX:
        cx = geom[0]
        vals = sorted(float(axes.y.to_value(p)) for p in geom[1:])
        return axes.x.label_at(cx), BoxStats(*vals)
    raise ValueError(kind)


def pixels_to_data(components, chart: AnnotatedChart, chart_type: ChartType) -> List[DataSeries]:
    """Turn named pixel-space components into data series.

    Components sharing a name are merged into one series; series appear in
    order of first occurrence.
    """
    axes = ChartAxes.from_chart(chart, chart_type)
    kind = chart_type.series_kind
    grouped: "OrderedDict[str, list]" = OrderedDict()
    for comp in components:
        name = comp.name if comp.name is not None else f"series-{comp.cluster_id + 1}"
        grouped.setdefault(name, []).extend(comp.elements())
    out = []
    for name, elements in grouped.items():
        pairs = [(element_to_data(g, kind, axes, chart_type), tuple(float(v) for v in g))
                 for g in elements]
        if kind in (SeriesKind.CONTINUOUS, SeriesKind.POINTS):
            pairs.sort(key=lambda p: (p[0][0], p[0][1]))
            if kind == SeriesKind.CONTINUOUS:
                pairs = _dedupe_x(pairs)
        else:
            pairs.sort(key=lambda p: p[1][0] if chart_type != ChartType.BAR_HORIZONTAL else p[1][1])
        out.append(DataSeries(
            name=name,
            kind=kind,
            x=tuple(p[0][0] for p in pairs),
            y=tuple(p[0][1] for p in pairs),
            geometry=tuple(p[1] for p in pairs),
        ))
    return out


def _dedupe_x(pairs):
    out: Dict[float, tuple] = {}
    for p in pairs:
        out.setdefault(p[0][0], p)
    return list(out.values())


def data_to_geometry(series: DataSeries, axes: ChartAxes, chart_type: ChartType):
    """Inverse of ``element_to_data`` for series whose pixel geometry is
    recoverable from values alone (lines, scatter, boxes)."""
    geom = []
    for x, y in zip(series.x, series.y):
        if series.kind in (SeriesKind.CONTINUOUS, SeriesKind.POINTS):
            geom.append((float(axes.x.to_pixel(float(x))), float(axes.y.to_pixel(float(y)))))
        elif series.kind == SeriesKind.BOX:
            cx = axes.x.pixel_of(str(x))
            ys = [float(axes.y.to_pixel(v)) for v in y.as_tuple()]
            geom.append((cx, *ys))
        else:
            return None
    return tuple(geom)
