import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from chartkp.errors import EmptyBox, InsufficientTicks, NonNumericTick
from chartkp.heatmaps import VIEW_NAMES, EmbeddingMap, HeatmapSet
from chartkp.postprocess import CandidatePoint
from chartkp.reconstruct.axes import AxisMap, ChartAxes, parse_number, pixels_to_data
from chartkp.reconstruct.cluster import ClusterParams, cluster_keypoints, cluster_vectors
from chartkp.reconstruct.components import ChartComponent, gt_components, reconstruct_components
from chartkp.reconstruct.legend import ColorLegendEmbedder, legend_match, match_names, roi_align
from chartkp.types import ChartType


def brute_partition(vectors, threshold):
    """Connected components by repeated merging over all pairs."""
    k = len(vectors)
    label = list(range(k))
    n = np.linalg.norm(vectors, axis=1)
    changed = True
    while changed:
        changed = False
        for i in range(k):
            for j in range(k):
                if i == j or n[i] == 0 or n[j] == 0:
                    continue
                if np.dot(vectors[i], vectors[j]) / (n[i] * n[j]) >= threshold and label[i] != label[j]:
                    lo = min(label[i], label[j])
                    label = [lo if l in (label[i], label[j]) else l for l in label]
                    changed = True
    groups = {}
    for i, l in enumerate(label):
        groups.setdefault(l, []).append(i)
    return sorted(groups.values())


def hs_with_scores(cands, scores, shape=(32, 32), ct=ChartType.LINE):
    views = {k: np.zeros(shape) for k in VIEW_NAMES}
    for c, s in zip(cands, scores):
        views["fg_class"][c.cell] = s
    logits = np.zeros(5)
    logits[ct.index] = 1
    return HeatmapSet(views, np.full((2,) + shape, 0.5), logits, 4)


def cand(x, y, conf=1.0):
    return CandidatePoint(x, y, conf, cell=(int(y), int(x)))


# ---------------------------------------------------------------- clustering

def test_two_groups_two_clusters():
    v = np.array([[1, 0], [1, 0], [0, 1], [0, 1.0]])
    assert cluster_vectors(v) == [[0, 1], [2, 3]]
    assert cluster_vectors(v[:1]) == [[0]]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 30))
def test_clustering_matches_brute_force(seed, k):
    v = np.random.default_rng(seed).standard_normal((k, 3))
    assert sorted(cluster_vectors(v)) == brute_partition(v, 0.85)


def test_euclidean_metric():
    v = np.array([[0.0, 0.0], [0.0, 5e-6], [1.0, 1.0]])
    assert cluster_vectors(v, ClusterParams(metric="euclidean")) == [[0, 1], [2]]
    with pytest.raises(ValueError):
        ClusterParams(cosine_threshold=1.0)


def test_cluster_keypoints_reads_cells():
    grid = np.zeros((2, 4, 4))
    grid[0, :, :2] = 1
    grid[1, :, 2:] = 1
    cands = [cand(0.5, 0.5), cand(3.5, 1.5), cand(1.5, 2.5)]
    assert cluster_keypoints(EmbeddingMap(grid), cands) == [[0, 2], [1]]


# ---------------------------------------------------------------- components

def test_line_sorted_left_to_right():
    cs = [cand(5.5, 4.5), cand(3.5, 6.5), cand(9.5, 2.5)]
    comps, _ = reconstruct_components([[0, 1, 2]], hs_with_scores(cs, [1, 1, 1]), ChartType.LINE, cs)
    xs = [p[0] for p in comps[0].pixel_geometry]
    assert xs == [14.0, 22.0, 38.0]


def test_line_one_y_per_column():
    cs = [cand(5.5, 4.5, 0.9), cand(5.5, 8.5, 0.9), cand(7.5, 4.5)]
    comps, _ = reconstruct_components([[0, 1, 2]], hs_with_scores(cs, [0.4, 0.9, 1.0]), ChartType.LINE, cs)
    assert comps[0].pixel_geometry == ((22.0, 34.0), (30.0, 18.0))


def test_box_keeps_top_five_ordered():
    ys = [2.5, 5.5, 8.5, 11.5, 14.5, 17.5, 20.5]
    cs = [cand(4.5, y) for y in ys]
    scores = [0.9, 0.2, 0.8, 0.7, 0.1, 0.95, 0.85]
    comps, _ = reconstruct_components([list(range(7))], hs_with_scores(cs, scores), ChartType.BOX_VERTICAL, cs)
    g = comps[0].pixel_geometry
    assert len(g) == 6 and g[0] == 18.0
    assert list(g[1:]) == sorted([y * 4 for y, s in zip(ys, scores) if s >= 0.7], reverse=True)


def test_scatter_confidence_rule():
    cs = [cand(2.5, 2.5, 1.0), cand(8.5, 8.5, 0.5), cand(12.5, 3.5, 0.2)]
    comps, _ = reconstruct_components([[0, 1, 2]], hs_with_scores(cs, [1, 1, 1]), ChartType.SCATTER, cs)
    assert [c.pixel_geometry for c in comps] == [(10.0, 10.0), (34.0, 34.0)]


def test_bar_corners_form_rectangle():
    cs = [cand(10.5, 3.5), cand(12.5, 10.5), cand(14.5, 17.5)]
    comps, _ = reconstruct_components([[0, 1, 2]], hs_with_scores(cs, [1, 0.5, 1]), ChartType.BAR_VERTICAL, cs)
    assert comps[0].pixel_geometry == (42.0, 14.0, 58.0, 70.0)


def test_degenerate_clusters_dropped():
    cs = [cand(1.5, 1.5), cand(2.5, 2.5)]
    comps, diag = reconstruct_components([[0, 1]], hs_with_scores(cs, [1, 1]), ChartType.BOX_VERTICAL, cs)
    assert comps == [] and "box" in diag[0]
    comps, diag = reconstruct_components([[0]], hs_with_scores(cs, [1, 1]), ChartType.BAR_HORIZONTAL, cs)
    assert comps == [] and diag


# ---------------------------------------------------------------- axes

def test_axis_interpolate_and_extrapolate():
    ax = AxisMap.fit([100, 200], [0, 10])
    assert float(ax.to_value(150)) == 5.0
    assert float(ax.to_value(250)) == 15.0
    assert float(ax.to_pixel(15.0)) == 250.0


def test_axis_exact_at_ticks():
    px, vals = [30.0, 80.0, 130.0, 180.0], [0.0, 2.5, 5.0, 7.5]
    ax = AxisMap.fit(px, vals)
    assert [float(ax.to_value(p)) for p in px] == vals


def test_log_axis_detected():
    ax = AxisMap.fit([0, 50, 100, 150], [1, 10, 100, 1000])
    assert ax.scale == "log"
    assert abs(float(ax.to_value(75)) - 10 ** 1.5) < 1e-9


def test_axis_errors():
    with pytest.raises(InsufficientTicks):
        AxisMap.fit([10], [1])
    with pytest.raises(ValueError):
        parse_number("abc")


@pytest.mark.parametrize("ct", ["line", "scatter", "bar-vertical", "bar-horizontal", "box-vertical"])
def test_pixels_to_data_recovers_values(make_chart, ct):
    chart = make_chart(ct, 17)
    series = pixels_to_data(gt_components(chart), chart, chart.chart_type)
    gt = {s.name: s for s in chart.data_series}
    axes = ChartAxes.from_chart(chart)
    cont = axes.x if chart.chart_type == ChartType.BAR_HORIZONTAL else axes.y
    for s in series:
        g = gt[s.name]
        assert len(s) == len(g)
        if g.kind.value in ("continuous", "points"):
            got = sorted(zip(s.x, s.y))
            want = sorted(zip(g.x, g.y))
            assert np.allclose(got, want, atol=max(axes.x.units_per_pixel, axes.y.units_per_pixel))
        elif g.kind.value == "bars":
            assert dict(zip(s.x, s.y)).keys() == dict(zip(g.x, g.y)).keys()
            for k, v in zip(g.x, g.y):
                assert abs(dict(zip(s.x, s.y))[k] - v) <= cont.units_per_pixel
        else:
            want = dict(zip(g.x, g.y))
            for k, v in zip(s.x, s.y):
                assert np.allclose(v.as_tuple(), want[k].as_tuple(), atol=cont.units_per_pixel)


# ---------------------------------------------------------------- roi align

def test_roi_align_whole_2x2_map():
    f = torch.tensor([[[1.0, 2.0], [3.0, 5.0]]], dtype=torch.float64)
    out = roi_align(f, (0, 0, 2, 2), (1, 1))
    assert abs(out.item() - 2.75) < 1e-12


def test_roi_align_constant_and_ramp():
    const = torch.full((2, 6, 6), 3.0, dtype=torch.float64)
    assert torch.allclose(roi_align(const, (0.3, 1.2, 4.1, 5.0), (3, 3)), torch.full((2, 3, 3), 3.0, dtype=torch.float64))
    ramp = torch.arange(10, dtype=torch.float64).repeat(10, 1)[None] * 0.7
    a = roi_align(ramp, (2, 2, 5, 5), (3, 3))
    b = roi_align(ramp, (3, 2, 6, 5), (3, 3))
    assert torch.allclose(b - a, torch.full_like(a, 0.7))


def test_roi_align_empty_box():
    with pytest.raises(EmptyBox):
        roi_align(torch.zeros(1, 4, 4), (2, 2, 2, 3), (1, 1))


# ---------------------------------------------------------------- legend

class FixedEmbedder:
    def __init__(self, clusters, patches):
        self.c, self.p = np.asarray(clusters, float), np.asarray(patches, float)

    def cluster_vectors(self, components):
        return self.c

    def patch_vectors(self, image, bboxes):
        return self.p



def test_legend_engineered_match(make_chart):
    from chartkp.types import LegendPair, TextBox, TextRole, AnnotatedChart
    boxes = (TextBox(0, ((0, 0), (5, 0), (5, 5)), "first", TextRole.LEGEND_LABEL),
             TextBox(1, ((0, 0), (5, 0), (5, 5)), "second", TextRole.LEGEND_LABEL))
    pairs = (LegendPair(0, (0, 0, 4, 4)), LegendPair(1, (0, 6, 4, 10)))
    chart = AnnotatedChart(np.zeros((20, 20, 3), np.uint8), ChartType.LINE, (), boxes, (), pairs)
    comps = [ChartComponent(ChartType.LINE, ((0, 0), (1, 1)), k) for k in range(2)]
    out = legend_match(comps, pairs, chart, FixedEmbedder([[0, 1], [1, 0]], [[0, 1], [1, 0]]))
    assert [c.name for c in out] == ["first", "second"]
    assert match_names(np.array([[1.0, 0]]), np.array([[1.0, 0]] * 3)) == [0]


def test_legend_fallback_names(make_chart):
    comps = [ChartComponent(ChartType.SCATTER, (1, 2), k) for k in range(3)]
    out = legend_match(comps, (), make_chart("scatter", 0))
    assert [c.name for c in out] == ["series-1", "series-2", "series-3"]


def test_color_embedder_matches_series(make_chart):
    chart = make_chart("line", 3)
    comps = gt_components(chart)
    if not chart.legend_pairs:
        pytest.skip("chart without legend")
    rgb = {}
    for p in chart.legend_pairs:
        x0, y0, x1, y1 = (int(round(v)) for v in p.bbox)
        rgb[chart.text_box(p.label_id).text] = tuple(chart.image[(y0 + y1) // 2, (x0 + x1) // 2].astype(float))
    colored = [ChartComponent(c.kind, c.pixel_geometry, k, rgb=rgb[c.name]) for k, c in enumerate(comps)]
    out = legend_match(colored, chart.legend_pairs, chart, ColorLegendEmbedder())
    assert [c.name for c in out] == [c.name for c in comps]
