"""Per-type heuristics turning keypoint clusters into chart components."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..heatmaps import HeatmapSet
from ..types import AnnotatedChart, ChartType, SeriesKind


@dataclass(frozen=True)
class ChartComponent:
    """One reconstructed chart element in pixel space.

    ``pixel_geometry`` is a polyline ((x, y), ...) for lines, a single
    (x, y) point for scatter, (x0, y0, x1, y1) for bars and
    (cx, y_min, y_q1, y_median, y_q3, y_max) for boxes, where y_min is the
    lowest whisker on screen (largest pixel row).
    """

    kind: ChartType
    pixel_geometry: tuple
    cluster_id: int
    name: Optional[str] = None
    rgb: Optional[Tuple[float, float, float]] = None
    cells: Tuple[Tuple[int, int], ...] = ()

    def elements(self) -> List[tuple]:
        if self.kind == ChartType.LINE:
            return [tuple(p) for p in self.pixel_geometry]
        return [tuple(self.pixel_geometry)]


def _score(hs: HeatmapSet, cand) -> float:
    r, c = cand.cell
    return float(hs.views["fg_class"][r, c])


def _mode_rgb(cands) -> Optional[Tuple[float, float, float]]:
    colors = [tuple(int(round(v)) for v in c.rgb) for c in cands if c.rgb is not None]
    if not colors:
        return None
    counts = Counter(colors)
    best = max(counts.values())
    return tuple(float(v) for v in min(k for k, n in counts.items() if n == best))


def _rank(cands, scores) -> List[int]:
    """Indices by descending class score, stable on ties."""
    return sorted(range(len(cands)), key=lambda i: -scores[i])


def _corner_pair(pts: List[Tuple[float, float]], scores: List[float]) -> Tuple[int, int]:
    """The two highest-scoring points; among points tied for a slot the pair
    farthest apart is chosen (lowest indices on exact ties)."""
    order = _rank(pts, scores)
    top = scores[order[0]]
    tied_top = [i for i in order if scores[i] == top]
    if len(tied_top) >= 2:
        pool_a = pool_b = tied_top
    else:
        second = scores[order[1]]
        pool_a = [order[0]]
        pool_b = [i for i in order[1:] if scores[i] == second]
    best, pair = -1.0, None
    for a in pool_a:
        for b in pool_b:
            if a == b:
                continue
            d = (pts[a][0] - pts[b][0]) ** 2 + (pts[a][1] - pts[b][1]) ** 2
            if d > best:
                best, pair = d, (a, b)
    return pair


def reconstruct_components(clusters: Sequence[Sequence[int]], hs: HeatmapSet, chart_type: ChartType,
                           cands: Sequence, params=None) -> Tuple[List[ChartComponent], List[str]]:
    """Components from clusters of candidates, plus diagnostics for dropped
    clusters. Candidate coordinates are in cells; output is in pixels."""
    from ..postprocess import PostprocessParams

    params = params or PostprocessParams()
    s = hs.stride
    out: List[ChartComponent] = []
    diag: List[str] = []
    for cid, members in enumerate(clusters):
        pts = [cands[i] for i in members]
        scores = [_score(hs, c) for c in pts]
        rgb = _mode_rgb(pts)
        cells = tuple(tuple(c.cell) for c in pts)
        base = ChartComponent(chart_type, (), cid, rgb=rgb, cells=cells)
        if chart_type == ChartType.LINE:
            cols = {}
            for c, sc in zip(pts, scores):
                cols.setdefault(c.cell[1], []).append((c, sc))
            poly = []
            for col in sorted(cols):
                group = cols[col]
                best = max(sc for _, sc in group)
                tied = [c for c, sc in group if sc == best]
                w = np.array([max(c.confidence, 1e-12) for c in tied])
                x = float(np.sum(w * [c.x for c in tied]) / w.sum())
                y = float(np.sum(w * [c.y for c in tied]) / w.sum())
                poly.append((x * s, y * s))
            poly.sort()
            if len(poly) < 2:
                diag.append(f"cluster {cid}: line with {len(poly)} column(s) dropped")
                continue
            out.append(replace(base, pixel_geometry=tuple(poly)))
        elif chart_type.is_bar:
            if len(pts) < 2:
                diag.append(f"cluster {cid}: bar with {len(pts)} point(s) dropped")
                continue
            xy = [(c.x * s, c.y * s) for c in pts]
            a, b = _corner_pair(xy, scores)
            x0, x1 = sorted((xy[a][0], xy[b][0]))
            y0, y1 = sorted((xy[a][1], xy[b][1]))
            if x1 <= x0 or y1 <= y0:
                diag.append(f"cluster {cid}: bar corners do not span a rectangle")
                continue
            out.append(replace(base, pixel_geometry=(x0, y0, x1, y1)))
        elif chart_type == ChartType.BOX_VERTICAL:
            if len(pts) < 5:
                diag.append(f"cluster {cid}: box with {len(pts)} point(s) dropped")
                continue
            top5 = _rank(pts, scores)[:5]
            chosen = sorted((pts[i] for i in top5), key=lambda c: -c.y)
            cx = float(np.median([c.x for c in chosen])) * s
            out.append(replace(base, pixel_geometry=(cx, *(c.y * s for c in chosen))))
        else:
            peak = max(c.confidence for c in pts)
            for c in pts:
                if c.confidence >= params.scatter_keep_factor * peak:
                    out.append(replace(base, pixel_geometry=(c.x * s, c.y * s), rgb=rgb))
    return out, diag


def gt_components(chart: AnnotatedChart) -> List[ChartComponent]:
    """Ground-truth pixel components, named after their series."""
    from ..annotation import _series_geometry

    out = []
    for si, series in enumerate(chart.data_series):
        geom = _series_geometry(chart, series)
        if series.kind == SeriesKind.CONTINUOUS:
            out.append(ChartComponent(chart.chart_type, tuple(tuple(g) for g in geom), si, series.name))
        else:
            out.extend(ChartComponent(chart.chart_type, tuple(g), si, series.name) for g in geom)
    return out
