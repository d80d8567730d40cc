"""Domain types shared by every stage of the pipeline.

All containers are frozen dataclasses. Pixel coordinates are ``(x, y)`` with
the origin at the top-left image corner; rectangles are ``(x0, y0, x1, y1)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Optional, Sequence, Tuple, Union

import numpy as np

Point = Tuple[float, float]
Rect = Tuple[float, float, float, float]


class ChartType(str, Enum):
    LINE = "line"
    SCATTER = "scatter"
    BAR_HORIZONTAL = "bar-horizontal"
    BAR_VERTICAL = "bar-vertical"
    BOX_VERTICAL = "box-vertical"

    @property
    def index(self) -> int:
        return CHART_TYPES.index(self)

    @property
    def series_kind(self) -> "SeriesKind":
        return _KIND_OF_TYPE[self]

    @property
    def is_bar(self) -> bool:
        return self in (ChartType.BAR_HORIZONTAL, ChartType.BAR_VERTICAL)


CHART_TYPES: Tuple[ChartType, ...] = tuple(ChartType)


class SeriesKind(str, Enum):
    CONTINUOUS = "continuous"
    POINTS = "points"
    BARS = "bars"
    BOX = "box"


_KIND_OF_TYPE = {
    ChartType.LINE: SeriesKind.CONTINUOUS,
    ChartType.SCATTER: SeriesKind.POINTS,
    ChartType.BAR_HORIZONTAL: SeriesKind.BARS,
    ChartType.BAR_VERTICAL: SeriesKind.BARS,
    ChartType.BOX_VERTICAL: SeriesKind.BOX,
}

# Number of geometry values stored per element, by series kind:
# continuous/points -> (x, y); bars -> (x0, y0, x1, y1);
# box -> (center_x, y_min, y_q1, y_median, y_q3, y_max).
GEOMETRY_WIDTH = {
    SeriesKind.CONTINUOUS: 2,
    SeriesKind.POINTS: 2,
    SeriesKind.BARS: 4,
    SeriesKind.BOX: 6,
}


class TextRole(str, Enum):
    CHART_TITLE = "chart-title"
    AXIS_TITLE = "axis-title"
    TICK_LABEL = "tick-label"
    LEGEND_LABEL = "legend-label"
    OTHER = "other"


class Axis(str, Enum):
    X = "x"
    Y = "y"


class KeypointRole(str, Enum):
    INFLECTION = "inflection"
    TOP_LEFT = "top-left"
    CENTER = "center"
    BOTTOM_RIGHT = "bottom-right"
    WHISKER_MIN = "whisker-min"
    WHISKER_Q1 = "whisker-q1"
    WHISKER_MEDIAN = "whisker-median"
    WHISKER_Q3 = "whisker-q3"
    WHISKER_MAX = "whisker-max"
    SCATTER = "scatter"


WHISKER_ROLES = (
    KeypointRole.WHISKER_MIN,
    KeypointRole.WHISKER_Q1,
    KeypointRole.WHISKER_MEDIAN,
    KeypointRole.WHISKER_Q3,
    KeypointRole.WHISKER_MAX,
)


@dataclass(frozen=True)
class BoxStats:
    min: float
    q1: float
    median: float
    q3: float
    max: float

    def as_tuple(self) -> Tuple[float, float, float, float, float]:
        return (self.min, self.q1, self.median, self.q3, self.max)

    @property
    def ordered(self) -> bool:
        return self.min <= self.q1 <= self.median <= self.q3 <= self.max


XValue = Union[str, float]
YValue = Union[float, BoxStats]


@dataclass(frozen=True)
class DataSeries:
    """A named data series.

    ``geometry`` optionally carries the pixel geometry of each element, one
    tuple per ``(x, y)`` pair; its width depends on ``kind`` (see
    ``GEOMETRY_WIDTH``).
    """

    name: str
    kind: SeriesKind
    x: Tuple[XValue, ...]
    y: Tuple[YValue, ...]
    geometry: Optional[Tuple[Tuple[float, ...], ...]] = None

    def __len__(self) -> int:
        return len(self.x)

    def numeric_x(self) -> Optional[np.ndarray]:
        """x values as floats, or None when any value is not numeric."""
        try:
            return np.array([float(v) for v in self.x], dtype=float)
        except (TypeError, ValueError):
            return None


@dataclass(frozen=True)
class TextBox:
    id: int
    polygon: Tuple[Point, ...]
    text: str
    role: TextRole

    @property
    def bbox(self) -> Rect:
        xs = [p[0] for p in self.polygon]
        ys = [p[1] for p in self.polygon]
        return (min(xs), min(ys), max(xs), max(ys))


@dataclass(frozen=True)
class AxisTick:
    axis: Axis
    point: Point
    label_id: int


@dataclass(frozen=True)
class LegendPair:
    label_id: int
    bbox: Rect


@dataclass(frozen=True, eq=False)
class AnnotatedChart:
    """A chart image with ground-truth series and the structural oracle inputs.

    ``image`` may be None for prediction files, which only carry series.
    """

    image: Optional[np.ndarray]
    chart_type: ChartType
    data_series: Tuple[DataSeries, ...]
    text_boxes: Tuple[TextBox, ...] = ()
    axis_ticks: Tuple[AxisTick, ...] = ()
    legend_pairs: Tuple[LegendPair, ...] = ()
    plot_bbox: Rect = (0.0, 0.0, 0.0, 0.0)
    image_size: Tuple[int, int] = (0, 0)
    chart_id: str = ""

    def __post_init__(self):
        if self.image is not None:
            self.image.setflags(write=False)
            if self.image_size == (0, 0):
                object.__setattr__(self, "image_size", tuple(self.image.shape[:2]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, AnnotatedChart):
            return NotImplemented
        if (self.image is None) != (other.image is None):
            return False
        if self.image is not None and not np.array_equal(self.image, other.image):
            return False
        return (
            self.chart_type == other.chart_type
            and self.data_series == other.data_series
            and self.text_boxes == other.text_boxes
            and self.axis_ticks == other.axis_ticks
            and self.legend_pairs == other.legend_pairs
            and tuple(self.plot_bbox) == tuple(other.plot_bbox)
            and tuple(self.image_size) == tuple(other.image_size)
            and self.chart_id == other.chart_id
        )

    __hash__ = None

    def text_box(self, box_id: int) -> TextBox:
        for box in self.text_boxes:
            if box.id == box_id:
                return box
        raise KeyError(box_id)

    def ticks_for(self, axis: Axis) -> Tuple[AxisTick, ...]:
        return tuple(t for t in self.axis_ticks if t.axis == axis)

    @property
    def scorable_6b(self) -> bool:
        """False when a labelled axis has fewer than two ticks."""
        for axis in Axis:
            n = len(self.ticks_for(axis))
            if n == 1:
                return False
        return len(self.axis_ticks) >= 2

    def without_ground_truth(self) -> "AnnotatedChart":
        return AnnotatedChart(
            image=self.image,
            chart_type=self.chart_type,
            data_series=(),
            text_boxes=self.text_boxes,
            axis_ticks=self.axis_ticks,
            legend_pairs=self.legend_pairs,
            plot_bbox=self.plot_bbox,
            image_size=self.image_size,
            chart_id=self.chart_id,
        )


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    group_id: int
    role: KeypointRole
    series: int = 0


@dataclass(frozen=True)
class KeypointList:
    points: Tuple[Keypoint, ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self) -> Iterator[Keypoint]:
        return iter(self.points)

    def group_ids(self) -> Tuple[int, ...]:
        return tuple(sorted({p.group_id for p in self.points}))

    def group(self, group_id: int) -> Tuple[Keypoint, ...]:
        return tuple(p for p in self.points if p.group_id == group_id)

    def chains(self) -> Tuple[Tuple[Keypoint, ...], ...]:
        """Ordered vertex chains used for dense interpolation.

        Scatter points are isolated marks, so each forms its own chain.
        """
        out = []
        for gid in self.group_ids():
            pts = self.group(gid)
            if all(p.role == KeypointRole.SCATTER for p in pts):
                out.extend((p,) for p in pts)
            else:
                out.append(pts)
        return tuple(out)

    @classmethod
    def from_points(cls, points: Sequence[Keypoint]) -> "KeypointList":
        return cls(tuple(points))
