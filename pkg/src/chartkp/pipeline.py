"""The inference tail shared by model predictions and injected ground truth:
candidates -> colour filter -> clustering -> components -> names -> data."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np

from .annotation import extract_keypoints
from .errors import ChartKPError
from .heatmaps import EmbeddingMap, HeatmapSet, oracle_embeddings
from .maskgen import build_mask_set
from .postprocess import PostprocessParams, attach_colors, color_filter, extract_candidates
from .reconstruct.axes import pixels_to_data
from .reconstruct.cluster import ClusterParams, cluster_keypoints
from .reconstruct.components import ChartComponent, reconstruct_components
from .reconstruct.legend import legend_match
from .types import AnnotatedChart, ChartType, DataSeries

PLOT_MARGIN = 2.0


@dataclass
class ChainResult:
    chart_type: ChartType
    series: List[DataSeries]
    components: List[ChartComponent]
    diagnostics: List[str] = field(default_factory=list)
    n_candidates: int = 0
    n_filtered: int = 0


def _inside(c, stride: int, bbox) -> bool:
    x, y = c.pixel(stride)
    x0, y0, x1, y1 = bbox
    return x0 - PLOT_MARGIN <= x <= x1 + PLOT_MARGIN and y0 - PLOT_MARGIN <= y <= y1 + PLOT_MARGIN


def run_chain(chart: AnnotatedChart, hs: HeatmapSet, emb: EmbeddingMap, chart_type: Optional[ChartType] = None,
              params: PostprocessParams = PostprocessParams(), cluster_params: ClusterParams = ClusterParams(),
              embedder=None) -> ChainResult:
    """Run every non-learned stage on one chart.

    Scatter candidates are component centroids; line, bar and box
    candidates are kept per cell so the heuristics see the whole mark.
    Never mutates its inputs.
    """
    ct = ChartType(chart_type) if chart_type is not None else hs.chart_type
    s = hs.stride
    diag: List[str] = []
    cands = extract_candidates(hs.fg_regress, hs.offset, params, reduce=ct == ChartType.SCATTER)
    n0 = len(cands)
    has_plot = tuple(chart.plot_bbox) != (0.0, 0.0, 0.0, 0.0)
    plot = chart.plot_bbox if has_plot else None
    if plot is not None:
        cands = [c for c in cands if _inside(c, s, plot)]
    if chart.image is not None:
        cands = attach_colors(cands, chart.image, s, plot)
        patches = [p.bbox for p in chart.legend_pairs]
        cands, ok = color_filter(cands, chart.image, patches, params, plot, return_flag=True)
        if not ok:
            diag.append("colour filter skipped: no histogram peaks")
    clusters = cluster_keypoints(emb, cands, cluster_params)
    comps, d = reconstruct_components(clusters, hs, ct, cands, params)
    diag.extend(d)
    comps = legend_match(comps, chart.legend_pairs, chart, embedder)
    try:
        series = pixels_to_data(comps, chart, ct)
    except ChartKPError as exc:
        diag.append(f"pixels_to_data failed: {exc}")
        series = []
    return ChainResult(ct, series, comps, diag, n0, len(cands))


def oracle_inputs(chart: AnnotatedChart, stride: int = 4) -> Tuple[HeatmapSet, EmbeddingMap]:
    """Ground-truth targets as predictions plus one-hot group embeddings."""
    kps = extract_keypoints(chart)
    masks = build_mask_set(chart, stride=stride, keypoints=kps)
    return HeatmapSet.from_mask_set(masks, chart.chart_type), oracle_embeddings(kps, masks.shape, stride)


def run_oracle(chart: AnnotatedChart, stride: int = 4, **kw) -> ChainResult:
    hs, emb = oracle_inputs(chart, stride)
    return run_chain(chart.without_ground_truth(), hs, emb, chart.chart_type, **kw)
