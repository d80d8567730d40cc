"""Annotation file format: one JSON document per chart next to a PNG image.

Layout (``format_version`` 1)::

    {
      "format_version": 1,
      "chart_id": "line-000007",
      "image": "line-000007.png",          # relative to the JSON file, optional
      "image_size": [H, W],
      "chart_type": "line",
      "plot_bbox": [x0, y0, x1, y1],
      "text_boxes": [{"id": 0, "polygon": [[x, y], ...], "text": "0.5",
                      "role": "tick-label"}, ...],
      "axis_ticks": [{"axis": "x", "point": [x, y], "label_id": 0}, ...],
      "legend_pairs": [{"label_id": 9, "bbox": [x0, y0, x1, y1]}, ...],
      "data_series": [{"name": "alpha", "kind": "continuous",
                       "data": [{"x": 0.0, "y": 1.5}, ...],
                       "geometry": [[x, y], ...]}, ...]
    }

Box series store ``y`` as ``{"min", "q1", "median", "q3", "max"}``.
Prediction files use the same layout; text boxes, ticks and legend pairs may
be omitted there.
"""

from __future__ import annotations

import json
import math
import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import jsonschema
import numpy as np
from PIL import Image

from .errors import DanglingReference, MalformedAnnotation, MissingGeometry, OutOfBounds
from .types import (
    AnnotatedChart,
    Axis,
    AxisTick,
    BoxStats,
    ChartType,
    DataSeries,
    GEOMETRY_WIDTH,
    Keypoint,
    KeypointList,
    KeypointRole,
    LegendPair,
    SeriesKind,
    TextBox,
    TextRole,
    WHISKER_ROLES,
)

FORMAT_VERSION = 1

_num = {"type": "number"}
_point = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}
_rect = {"type": "array", "items": _num, "minItems": 4, "maxItems": 4}
_box_y = {
    "type": "object",
    "required": ["min", "q1", "median", "q3", "max"],
    "properties": {k: _num for k in ("min", "q1", "median", "q3", "max")},
}

SCHEMA: Dict[str, Any] = {
    "type": "object",
    "required": ["format_version", "chart_type", "image_size", "data_series"],
    "properties": {
        "format_version": {"const": FORMAT_VERSION},
        "chart_id": {"type": "string"},
        "image": {"type": ["string", "null"]},
        "image_size": {"type": "array", "items": {"type": "integer", "minimum": 1},
                       "minItems": 2, "maxItems": 2},
        "chart_type": {"enum": [t.value for t in ChartType]},
        "plot_bbox": _rect,
        "text_boxes": {"type": "array", "items": {
            "type": "object",
            "required": ["id", "polygon", "text", "role"],
            "properties": {
                "id": {"type": "integer"},
                "polygon": {"type": "array", "items": _point, "minItems": 3},
                "text": {"type": "string"},
                "role": {"enum": [r.value for r in TextRole]},
            },
        }},
        "axis_ticks": {"type": "array", "items": {
            "type": "object",
            "required": ["axis", "point", "label_id"],
            "properties": {
                "axis": {"enum": [a.value for a in Axis]},
                "point": _point,
                "label_id": {"type": "integer"},
            },
        }},
        "legend_pairs": {"type": "array", "items": {
            "type": "object",
            "required": ["label_id", "bbox"],
            "properties": {"label_id": {"type": "integer"}, "bbox": _rect},
        }},
        "data_series": {"type": "array", "items": {
            "type": "object",
            "required": ["name", "kind", "data"],
            "properties": {
                "name": {"type": "string"},
                "kind": {"enum": [k.value for k in SeriesKind]},
                "data": {"type": "array", "items": {
                    "type": "object",
                    "required": ["x", "y"],
                    "properties": {
                        "x": {"type": ["string", "number"]},
                        "y": {"oneOf": [_num, _box_y]},
                    },
                }},
                "geometry": {"type": ["array", "null"],
                             "items": {"type": "array", "items": _num}},
            },
        }},
    },
}


# ---------------------------------------------------------------- serialize

def _series_to_dict(s: DataSeries) -> Dict[str, Any]:
    data = []
    for x, y in zip(s.x, s.y):
        if isinstance(y, BoxStats):
            yv: Any = {"min": y.min, "q1": y.q1, "median": y.median, "q3": y.q3, "max": y.max}
        else:
            yv = y
        data.append({"x": x, "y": yv})
    out: Dict[str, Any] = {"name": s.name, "kind": s.kind.value, "data": data}
    if s.geometry is not None:
        out["geometry"] = [list(g) for g in s.geometry]
    return out


def serialize(chart: AnnotatedChart, image_name: Optional[str] = None) -> Dict[str, Any]:
    return {
        "format_version": FORMAT_VERSION,
        "chart_id": chart.chart_id,
        "image": image_name,
        "image_size": [int(chart.image_size[0]), int(chart.image_size[1])],
        "chart_type": chart.chart_type.value,
        "plot_bbox": [float(v) for v in chart.plot_bbox],
        "text_boxes": [
            {"id": b.id, "polygon": [list(p) for p in b.polygon], "text": b.text,
             "role": b.role.value}
            for b in chart.text_boxes
        ],
        "axis_ticks": [
            {"axis": t.axis.value, "point": list(t.point), "label_id": t.label_id}
            for t in chart.axis_ticks
        ],
        "legend_pairs": [{"label_id": p.label_id, "bbox": list(p.bbox)} for p in chart.legend_pairs],
        "data_series": [_series_to_dict(s) for s in chart.data_series],
    }


def save_annotation(chart: AnnotatedChart, path: Union[str, os.PathLike],
                    write_image: bool = True) -> Path:
    """Write ``<stem>.json`` (and ``<stem>.png`` when an image is present)."""
    path = Path(path)
    image_name = None
    if write_image and chart.image is not None:
        image_name = path.with_suffix(".png").name
        Image.fromarray(np.asarray(chart.image, dtype=np.uint8)).save(path.with_suffix(".png"))
    path.write_text(json.dumps(serialize(chart, image_name), indent=1), encoding="utf-8")
    return path


# ---------------------------------------------------------------- parse

def _tuplify(points) -> tuple:
    return tuple(tuple(float(v) for v in p) for p in points)


def _parse_series(d: Dict[str, Any]) -> DataSeries:
    kind = SeriesKind(d["kind"])
    xs, ys = [], []
    for item in d["data"]:
        xs.append(item["x"])
        y = item["y"]
        if kind == SeriesKind.BOX:
            if not isinstance(y, dict):
                raise MalformedAnnotation(f"series {d['name']!r}: box values need a summary record")
            ys.append(BoxStats(*(float(y[k]) for k in ("min", "q1", "median", "q3", "max"))))
        else:
            if isinstance(y, dict):
                raise MalformedAnnotation(f"series {d['name']!r}: unexpected summary record")
            ys.append(y)
    geometry = d.get("geometry")
    if geometry is not None:
        geometry = _tuplify(geometry)
    return DataSeries(d["name"], kind, tuple(xs), tuple(ys), geometry)


def from_dict(doc: Dict[str, Any], image: Optional[np.ndarray] = None) -> AnnotatedChart:
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        raise MalformedAnnotation(exc.message) from exc
    chart = AnnotatedChart(
        image=image,
        chart_type=ChartType(doc["chart_type"]),
        data_series=tuple(_parse_series(s) for s in doc["data_series"]),
        text_boxes=tuple(
            TextBox(b["id"], _tuplify(b["polygon"]), b["text"], TextRole(b["role"]))
            for b in doc.get("text_boxes", [])
        ),
        axis_ticks=tuple(
            AxisTick(Axis(t["axis"]), tuple(float(v) for v in t["point"]), t["label_id"])
            for t in doc.get("axis_ticks", [])
        ),
        legend_pairs=tuple(
            LegendPair(p["label_id"], tuple(float(v) for v in p["bbox"]))
            for p in doc.get("legend_pairs", [])
        ),
        plot_bbox=tuple(float(v) for v in doc.get("plot_bbox", (0, 0, *reversed(doc["image_size"])))),
        image_size=tuple(doc["image_size"]),
        chart_id=doc.get("chart_id", ""),
    )
    validate(chart)
    return chart


def load_annotation(path: Union[str, os.PathLike], load_image: bool = True) -> AnnotatedChart:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MalformedAnnotation(f"{path}: {exc}") from exc
    image = None
    if load_image and isinstance(doc, dict) and doc.get("image"):
        img_path = path.parent / doc["image"]
        image = np.array(Image.open(img_path).convert("RGB"))
        if isinstance(doc.get("image_size"), list) and list(image.shape[:2]) != doc["image_size"]:
            raise MalformedAnnotation(f"{path}: image_size does not match {img_path.name}")
    if isinstance(doc, dict) and not doc.get("chart_id"):
        doc["chart_id"] = path.stem
    return from_dict(doc, image)


SNAPSHOT_SUFFIX = ".resolved.json"


def annotation_paths(folder: Union[str, os.PathLike]) -> List[Path]:
    """Annotation files in ``folder``, sorted; run snapshots are skipped."""
    return sorted(p for p in Path(folder).glob("*.json") if not p.name.endswith(SNAPSHOT_SUFFIX))


# ---------------------------------------------------------------- validate

def _check_point(p, h: int, w: int, what: str) -> None:
    x, y = p
    if not (math.isfinite(x) and math.isfinite(y)) or not (0 <= x <= w and 0 <= y <= h):
        raise OutOfBounds(f"{what} at ({x}, {y}) outside {w}x{h} image")


def validate(chart: AnnotatedChart) -> None:
    h, w = chart.image_size
    if chart.image is not None and chart.image.shape != (h, w, 3):
        raise MalformedAnnotation(f"image shape {chart.image.shape} != ({h}, {w}, 3)")
    x0, y0, x1, y1 = chart.plot_bbox
    if not (x0 <= x1 and y0 <= y1):
        raise MalformedAnnotation("plot_bbox corners out of order")
    _check_point((x0, y0), h, w, "plot_bbox")
    _check_point((x1, y1), h, w, "plot_bbox")

    ids = set()
    for box in chart.text_boxes:
        if box.id in ids:
            raise MalformedAnnotation(f"duplicate text box id {box.id}")
        ids.add(box.id)
        for p in box.polygon:
            _check_point(p, h, w, f"text box {box.id}")
    for tick in chart.axis_ticks:
        if tick.label_id not in ids:
            raise DanglingReference(f"axis tick references missing text box {tick.label_id}")
        _check_point(tick.point, h, w, "axis tick")
    for pair in chart.legend_pairs:
        if pair.label_id not in ids:
            raise DanglingReference(f"legend pair references missing text box {pair.label_id}")
        _check_point(pair.bbox[:2], h, w, "legend patch")
        _check_point(pair.bbox[2:], h, w, "legend patch")

    for s in chart.data_series:
        if s.kind != chart.chart_type.series_kind:
            raise MalformedAnnotation(
                f"series {s.name!r} kind {s.kind.value} does not fit {chart.chart_type.value}")
        if len(s.x) != len(s.y):
            raise MalformedAnnotation(f"series {s.name!r}: x/y length mismatch")
        if s.kind == SeriesKind.CONTINUOUS:
            xs = s.numeric_x()
            if xs is not None and np.any(np.diff(xs) <= 0):
                raise MalformedAnnotation(f"series {s.name!r}: x not strictly increasing")
        if s.kind == SeriesKind.BOX:
            for stats in s.y:
                if not stats.ordered:
                    raise MalformedAnnotation(f"series {s.name!r}: box summary out of order")
        if s.geometry is not None:
            if len(s.geometry) != len(s.x):
                raise MalformedAnnotation(f"series {s.name!r}: geometry length mismatch")
            width = GEOMETRY_WIDTH[s.kind]
            for g in s.geometry:
                if len(g) != width:
                    raise MalformedAnnotation(f"series {s.name!r}: geometry needs {width} values")
                if s.kind == SeriesKind.BOX:
                    pts = [(g[0], y) for y in g[1:]]
                else:
                    pts = [g[i:i + 2] for i in range(0, width, 2)]
                for p in pts:
                    _check_point(p, h, w, f"series {s.name!r} geometry")


# ---------------------------------------------------------------- keypoints

def _series_geometry(chart: AnnotatedChart, series: DataSeries):
    if series.geometry is not None:
        return series.geometry
    if series.kind == SeriesKind.BARS:
        raise MissingGeometry(f"series {series.name!r}: bar extents need pixel geometry")
    from .reconstruct.axes import ChartAxes, data_to_geometry
    from .errors import InsufficientTicks, NonNumericTick

    try:
        axes = ChartAxes.from_chart(chart)
    except (InsufficientTicks, NonNumericTick, KeyError) as exc:
        raise MissingGeometry(f"series {series.name!r}: {exc}") from exc
    return data_to_geometry(series, axes, chart.chart_type)


def extract_keypoints(gt: AnnotatedChart) -> KeypointList:
    """Keypoints per chart component.

    Bars give top-left, center and bottom-right; boxes give their five
    whiskers; scatter gives every point; lines give every vertex. Lines and
    scatter series form one group each, bars and boxes one group per mark.
    """
    points = []
    group = 0
    for si, series in enumerate(gt.data_series):
        geom = _series_geometry(gt, series)
        if series.kind == SeriesKind.CONTINUOUS:
            points.extend(Keypoint(x, y, group, KeypointRole.INFLECTION, si) for x, y in geom)
            group += 1
        elif series.kind == SeriesKind.POINTS:
            points.extend(Keypoint(x, y, group, KeypointRole.SCATTER, si) for x, y in geom)
            group += 1
        elif series.kind == SeriesKind.BARS:
            for x0, y0, x1, y1 in geom:
                points.append(Keypoint(x0, y0, group, KeypointRole.TOP_LEFT, si))
                points.append(Keypoint(0.5 * (x0 + x1), 0.5 * (y0 + y1), group, KeypointRole.CENTER, si))
                points.append(Keypoint(x1, y1, group, KeypointRole.BOTTOM_RIGHT, si))
                group += 1
        else:
            for cx, *ys in geom:
                for role, y in zip(WHISKER_ROLES, ys):
                    points.append(Keypoint(cx, y, group, role, si))
                group += 1
    kps = KeypointList(tuple(points))
    if gt.plot_bbox != (0.0, 0.0, 0.0, 0.0):
        x0, y0, x1, y1 = gt.plot_bbox
        for p in kps:
            if not (x0 - 2 <= p.x <= x1 + 2 and y0 - 2 <= p.y <= y1 + 2):
                raise OutOfBounds(f"keypoint ({p.x}, {p.y}) outside plot area")
    return kps
