"""Element-detection (6a) and data/name (6b) scores.

Every scorer returns a value in [0, 1]: 1 for a perfect prediction, 0 for an
empty one. Assignments between predicted and ground-truth items are optimal
(Hungarian) and unmatched items cost 1 each; totals are divided by the
larger of the two set sizes.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import linear_sum_assignment

from .annotation import annotation_paths, load_annotation
from .errors import ChartKPError
from .reconstruct.components import ChartComponent, gt_components
from .types import CHART_TYPES, AnnotatedChart, BoxStats, ChartType, DataSeries, SeriesKind

N_LINE_SAMPLES = 50
MATCH_RADIUS_FRACTION = 0.02


# ---------------------------------------------------------------- helpers

def assignment_score(cost: np.ndarray) -> float:
    """1 - (optimal matched cost + unmatched count) / max(n, m); costs in [0, 1]."""
    cost = np.asarray(cost, dtype=float)
    n, m = cost.shape if cost.ndim == 2 else (0, 0)
    if n == 0 and m == 0:
        return 1.0
    if n == 0 or m == 0:
        return 0.0
    rows, cols = linear_sum_assignment(cost)
    total = cost[rows, cols].sum() + (max(n, m) - len(rows))
    return float(min(1.0, max(0.0, 1.0 - total / max(n, m))))


def levenshtein(a: str, b: str) -> int:
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def normalized_edit_distance(a: str, b: str) -> float:
    if not a and not b:
        return 0.0
    return levenshtein(a, b) / max(len(a), len(b))


def _range(values: Sequence[float]) -> float:
    v = np.asarray(values, dtype=float)
    r = float(v.max() - v.min()) if len(v) else 0.0
    return r if r > 0 else max(1.0, float(np.max(np.abs(v))) if len(v) else 1.0)


# ---------------------------------------------------------------- continuous

def _capped_abs_integral(x: np.ndarray, d: np.ndarray) -> float:
    """Exact integral of min(1, |d(x)|) for piecewise-linear d on knots x."""
    total = 0.0
    for x0, x1, a, b in zip(x[:-1], x[1:], d[:-1], d[1:]):
        if x1 <= x0:
            continue
        ts = [0.0, 1.0]
        for level in (-1.0, 0.0, 1.0):
            if (a - level) * (b - level) < 0:
                ts.append((level - a) / (b - a))
        ts.sort()
        for t0, t1 in zip(ts[:-1], ts[1:]):
            f0 = min(1.0, abs(a + (b - a) * t0))
            f1 = min(1.0, abs(a + (b - a) * t1))
            total += 0.5 * (f0 + f1) * (t1 - t0) * (x1 - x0)
    return total


def score_continuous(pred: DataSeries, gt: DataSeries) -> float:
    """1 - mean over the gt x-range of min(1, |pred(x) - gt(x)| / gt y-range).

    Both series are linearly interpolated (pred held constant past its
    ends); the mean is the exact integral divided by the range length.
    """
    px, gx = pred.numeric_x(), gt.numeric_x()
    if px is None or gx is None or len(pred) == 0 or len(gt) == 0:
        return 0.0
    po, go = np.argsort(px, kind="stable"), np.argsort(gx, kind="stable")
    px, py = px[po], np.asarray(pred.y, float)[po]
    gx, gy = gx[go], np.asarray(gt.y, float)[go]
    scale = _range(gy)
    lo, hi = gx[0], gx[-1]
    if hi <= lo:
        return float(1.0 - min(1.0, abs(np.interp(lo, px, py) - gy[0]) / scale))
    knots = np.unique(np.concatenate([gx, px[(px > lo) & (px < hi)]]))
    d = (np.interp(knots, px, py) - np.interp(knots, gx, gy)) / scale
    return float(1.0 - _capped_abs_integral(knots, d) / (hi - lo))


# ---------------------------------------------------------------- scatter

def mahalanobis_cost(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Pairwise Mahalanobis distances under the gt covariance, capped at 1."""
    pred = np.asarray(pred, float).reshape(-1, 2)
    gt = np.asarray(gt, float).reshape(-1, 2)
    cov = np.cov(gt.T, bias=True) if len(gt) > 1 else np.zeros((2, 2))
    cov = np.atleast_2d(cov)
    eps = max(1e-6 * float(np.trace(cov)), 1e-12)
    inv = np.linalg.inv(cov + eps * np.eye(2))
    diff = pred[:, None, :] - gt[None, :, :]
    d2 = np.einsum("ijk,kl,ijl->ij", diff, inv, diff)
    return np.minimum(1.0, np.sqrt(np.maximum(d2, 0.0)))


def score_scatter(pred, gt) -> float:
    pred = np.asarray(pred, float).reshape(-1, 2)
    gt = np.asarray(gt, float).reshape(-1, 2)
    if len(gt) == 0:
        return 1.0 if len(pred) == 0 else 0.0
    if len(pred) == 0:
        return 0.0
    return assignment_score(mahalanobis_cost(pred, gt))


def _points(series: DataSeries) -> np.ndarray:
    xs = series.numeric_x()
    if xs is None:
        return np.zeros((0, 2))
    return np.column_stack([xs, np.asarray(series.y, float)]) if len(xs) else np.zeros((0, 2))


# ---------------------------------------------------------------- discrete

def score_discrete(pred: Sequence[Tuple[str, float]], gt: Sequence[Tuple[str, float]], mode: str = "fuzzy") -> float:
    """Label/value pairs. Per pair, d = 1 - (1 - d_label)(1 - d_value) with
    d_value = min(1, |dv| / gt value range)."""
    if mode not in ("exact", "fuzzy"):
        raise ValueError("mode must be 'exact' or 'fuzzy'")
    pred, gt = list(pred), list(gt)
    if not pred or not gt:
        return 1.0 if not pred and not gt else 0.0
    scale = _range([v for _, v in gt])
    cost = np.zeros((len(pred), len(gt)))
    for i, (pl, pv) in enumerate(pred):
        for j, (gl, gv) in enumerate(gt):
            if mode == "exact":
                dl = 0.0 if str(pl) == str(gl) else 1.0
            else:
                dl = normalized_edit_distance(str(pl), str(gl))
            dv = min(1.0, abs(float(pv) - float(gv)) / scale)
            cost[i, j] = 1.0 - (1.0 - dl) * (1.0 - dv)
    return assignment_score(cost)


def score_box(pred: Sequence[Tuple[str, BoxStats]], gt: Sequence[Tuple[str, BoxStats]]) -> float:
    """Boxes matched by exact label; per box the mean over the five stats of
    min(1, |d| / range of all gt stat values)."""
    pred, gt = list(pred), list(gt)
    if not pred or not gt:
        return 1.0 if not pred and not gt else 0.0
    scale = _range([v for _, b in gt for v in b.as_tuple()])
    cost = np.ones((len(pred), len(gt)))
    for i, (pl, pb) in enumerate(pred):
        for j, (gl, gb) in enumerate(gt):
            if str(pl) == str(gl):
                d = np.abs(np.subtract(pb.as_tuple(), gb.as_tuple())) / scale
                cost[i, j] = float(np.mean(np.minimum(1.0, d)))
    return assignment_score(cost)


# ---------------------------------------------------------------- series level

def series_score(pred: DataSeries, gt: DataSeries, mode: str = "fuzzy") -> float:
    if gt.kind == SeriesKind.CONTINUOUS:
        return score_continuous(pred, gt)
    if gt.kind == SeriesKind.POINTS:
        return score_scatter(_points(pred), _points(gt))
    if gt.kind == SeriesKind.BARS:
        return score_discrete(list(zip(pred.x, pred.y)), list(zip(gt.x, gt.y)), mode)
    return score_box(list(zip(pred.x, pred.y)), list(zip(gt.x, gt.y)))


def score_6b_data(pred: Sequence[DataSeries], gt: Sequence[DataSeries], mode: str = "fuzzy") -> float:
    """Series matched one-to-one to maximize the summed per-series score."""
    pred, gt = list(pred), list(gt)
    if not pred or not gt:
        return 1.0 if not pred and not gt else 0.0
    cost = np.array([[1.0 - series_score(p, g, mode) for g in gt] for p in pred])
    return assignment_score(cost)


def score_6b_name(pred: Sequence[str], gt: Sequence[str]) -> float:
    pred, gt = list(pred), list(gt)
    if not pred or not gt:
        return 1.0 if not pred and not gt else 0.0
    cost = np.array([[normalized_edit_distance(p, g) for g in gt] for p in pred])
    return assignment_score(cost)


# ---------------------------------------------------------------- 6a

def _line_cost(pred: Sequence, gt: Sequence, height: float) -> float:
    gx = np.array([p[0] for p in gt], float)
    gy = np.array([p[1] for p in gt], float)
    px = np.array([p[0] for p in pred], float)
    py = np.array([p[1] for p in pred], float)
    go, po = np.argsort(gx, kind="stable"), np.argsort(px, kind="stable")
    xs = np.linspace(gx.min(), gx.max(), N_LINE_SAMPLES)
    dev = np.abs(np.interp(xs, px[po], py[po]) - np.interp(xs, gx[go], gy[go]))
    return float(min(1.0, dev.mean() / height))


def _element_distance(p: tuple, g: tuple, chart_type: ChartType) -> float:
    if chart_type == ChartType.SCATTER:
        return math.dist(p, g)
    if chart_type.is_bar:
        return 0.5 * (math.dist(p[:2], g[:2]) + math.dist(p[2:], g[2:]))
    return float(np.mean([math.dist((p[0], a), (g[0], b)) for a, b in zip(p[1:], g[1:])]))


def score_6a(pred: Sequence[ChartComponent], gt: Sequence[ChartComponent], chart_type: ChartType,
             plot_bbox) -> float:
    """Pixel-space element detection.

    Points, bar corners and box whiskers cost min(1, distance / (2% of the
    plot diagonal)); lines cost their mean vertical deviation at 50 x
    samples over the plot height, capped at 1.
    """
    pred, gt = list(pred), list(gt)
    if not pred or not gt:
        return 1.0 if not pred and not gt else 0.0
    x0, y0, x1, y1 = plot_bbox
    w, h = max(x1 - x0, 1.0), max(y1 - y0, 1.0)
    radius = MATCH_RADIUS_FRACTION * math.hypot(w, h)
    cost = np.zeros((len(pred), len(gt)))
    for i, p in enumerate(pred):
        for j, g in enumerate(gt):
            if chart_type == ChartType.LINE:
                cost[i, j] = _line_cost(p.pixel_geometry, g.pixel_geometry, h)
            else:
                cost[i, j] = min(1.0, _element_distance(p.pixel_geometry, g.pixel_geometry, chart_type) / radius)
    return assignment_score(cost)


def series_components(series: Sequence[DataSeries], chart_type: ChartType) -> List[ChartComponent]:
    """Pixel components carried in series geometry (series without it are skipped)."""
    out = []
    for si, s in enumerate(series):
        if s.geometry is None:
            continue
        if chart_type == ChartType.LINE:
            if len(s.geometry):
                out.append(ChartComponent(chart_type, tuple(tuple(g) for g in s.geometry), si, s.name))
        else:
            out.extend(ChartComponent(chart_type, tuple(g), si, s.name) for g in s.geometry)
    return out


# ---------------------------------------------------------------- reports

@dataclass(frozen=True)
class ChartScore:
    chart_id: str
    chart_type: str
    score_6a: float
    score_6b_data: float
    score_6b_name: float
    missing: bool = False


@dataclass
class EvalReport:
    per_chart: List[ChartScore]
    per_type: Dict[str, Dict[str, float]] = field(default_factory=dict)
    overall: Dict[str, float] = field(default_factory=dict)

    @classmethod
    def from_scores(cls, scores: Sequence[ChartScore]) -> "EvalReport":
        scores = sorted(scores, key=lambda s: s.chart_id)
        per_type = {}
        for ct in CHART_TYPES:
            rows = [s for s in scores if s.chart_type == ct.value]
            if rows:
                per_type[ct.value] = _aggregate(rows)
        overall = _aggregate(scores) if scores else {"6a": 0.0, "6b-data": 0.0, "6b-name": 0.0, "n": 0}
        return cls(list(scores), per_type, overall)

    @property
    def n_missing(self) -> int:
        return sum(s.missing for s in self.per_chart)

    def table(self) -> str:
        lines = [f"{'type':<16}{'6a':>8}{'6b-data':>10}{'6b-name':>10}{'n':>6}"]
        rows = list(self.per_type.items()) + [("ALL", self.overall)]
        for name, agg in rows:
            lines.append(f"{name:<16}{agg['6a']:>8.4f}{agg['6b-data']:>10.4f}{agg['6b-name']:>10.4f}{agg['n']:>6d}")
        if self.n_missing:
            lines.append(f"missing predictions: {self.n_missing}")
        return "\n".join(lines)

    def records(self) -> List[dict]:
        return [asdict(s) for s in self.per_chart]


def _aggregate(rows: Sequence[ChartScore]) -> Dict[str, float]:
    return {
        "6a": float(np.mean([r.score_6a for r in rows])),
        "6b-data": float(np.mean([r.score_6b_data for r in rows])),
        "6b-name": float(np.mean([r.score_6b_name for r in rows])),
        "n": len(rows),
    }


def score_chart(pred: Optional[AnnotatedChart], gt: AnnotatedChart) -> ChartScore:
    ct = gt.chart_type
    if pred is None:
        return ChartScore(gt.chart_id, ct.value, 0.0, 0.0, 0.0, missing=True)
    pred_series = [s for s in pred.data_series if s.kind == ct.series_kind]
    s6a = score_6a(series_components(pred_series, ct), gt_components(gt), ct, gt.plot_bbox)
    s6b = score_6b_data(pred_series, gt.data_series)
    names = score_6b_name(sorted({s.name for s in pred_series}), [s.name for s in gt.data_series])
    return ChartScore(gt.chart_id, ct.value, s6a, s6b, names)


def evaluate(pred_dir: Union[str, os.PathLike], gt_dir: Union[str, os.PathLike], jobs: int = 1) -> EvalReport:
    """Score every ground-truth annotation in ``gt_dir`` against the file of
    the same name in ``pred_dir``; absent or unreadable predictions score 0
    and are flagged."""
    gt_paths = annotation_paths(gt_dir)
    pred_dir = Path(pred_dir)

    def one(path: Path) -> ChartScore:
        gt = load_annotation(path, load_image=False)
        pred_path = pred_dir / path.name
        pred = None
        if pred_path.exists():
            try:
                pred = load_annotation(pred_path, load_image=False)
            except (ChartKPError, OSError, ValueError):
                pred = None
        return score_chart(pred, gt)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            scores = list(pool.map(one, gt_paths))
    else:
        scores = [one(p) for p in gt_paths]
    return EvalReport.from_scores(scores)


# ---------------------------------------------------------------- export

def export_task6(chart: AnnotatedChart) -> dict:
    """Series and visual elements in the layout of the public challenge
    scorer's task-6 output block, as far as that layout is known here."""
    ct = chart.chart_type
    elements: Dict[str, list] = {"bars": [], "lines": [], "scatter points": [], "boxplots": []}
    for s in chart.data_series:
        for g in s.geometry or ():
            if ct.is_bar:
                x0, y0, x1, y1 = g
                elements["bars"].append({"x0": x0, "y0": y0, "width": x1 - x0, "height": y1 - y0})
            elif ct == ChartType.SCATTER:
                elements["scatter points"].append({"x": g[0], "y": g[1]})
            elif ct == ChartType.BOX_VERTICAL:
                cx, *ys = g
                keys = ("min", "first_quartile", "median", "third_quartile", "max")
                elements["boxplots"].append({k: {"x": cx, "y": y} for k, y in zip(keys, ys)})
        if ct == ChartType.LINE and s.geometry:
            elements["lines"].append([{"x": x, "y": y} for x, y in s.geometry])
    series = []
    for s in chart.data_series:
        data = []
        for x, y in zip(s.x, s.y):
            if isinstance(y, BoxStats):
                data.append({"x": x, "min": y.min, "first_quartile": y.q1, "median": y.median,
                             "third_quartile": y.q3, "max": y.max})
            else:
                data.append({"x": x, "y": y})
        series.append({"name": s.name, "data": data})
    return {"task6": {"output": {"data series": series, "visual elements": elements}}}


def write_task6(chart: AnnotatedChart, path: Union[str, os.PathLike]) -> None:
    Path(path).write_text(json.dumps(export_task6(chart), indent=1), encoding="utf-8")
