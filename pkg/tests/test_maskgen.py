import math

import numpy as np
from hypothesis import given, settings, strategies as st

from chartkp.annotation import extract_keypoints
from chartkp.maskgen import (
    TRUNCATE, Heatmap, binarize, build_mask_set, dense_directional_mask, gaussian_sparse_mask,
    interpolate_chain, owner_map, to_cell,
)
from chartkp.types import AnnotatedChart, ChartType, DataSeries, Keypoint, KeypointList, KeypointRole, SeriesKind


def brute_render(cells, shape, sigma=2.0):
    """Max of truncated Gaussians, evaluated cell by cell."""
    out = np.zeros(shape)
    for r in range(shape[0]):
        for c in range(shape[1]):
            for rr, cc in cells:
                d = math.hypot(r - rr, c - cc)
                if d <= TRUNCATE * sigma:
                    out[r, c] = max(out[r, c], math.exp(-d * d / (2 * sigma * sigma)))
    return out


def test_peak_and_off_peak():
    hm = gaussian_sparse_mask([(16 * 4 + 1, 16 * 4 + 1)], (32, 32), sigma=2, stride=4).grid
    assert hm[16, 16] == 1.0
    assert abs(hm[16, 18] - math.exp(-0.5)) <= 1e-9


def test_max_combine_not_sum():
    hm = gaussian_sparse_mask([(40, 40), (44, 40)], (32, 32), stride=4).grid
    assert hm.max() == 1.0
    assert hm[10, 10] == 1.0 and hm[10, 11] == 1.0
    assert abs(hm[9, 10] - math.exp(-1 / 8)) < 1e-12


def test_empty_points_all_zero():
    assert not gaussian_sparse_mask([], (8, 8)).grid.any()


def test_interpolation_positions():
    pts = interpolate_chain([(0, 0), (11, 0)], 10)
    assert pts == [(float(x), 0.0) for x in range(12)]


def test_interpolation_count_per_segment():
    chain = [(0, 0), (5, 7), (20, 3), (21, 30)]
    pts = interpolate_chain(chain, 10)
    assert len(pts) == len(chain) + 10 * (len(chain) - 1)
    for i in range(len(chain) - 1):
        seg = pts[11 * i: 11 * i + 12]
        assert seg[0] == tuple(map(float, chain[i])) and seg[-1] == tuple(map(float, chain[i + 1]))
        a, b = np.array(chain[i], float), np.array(chain[i + 1], float)
        expect = [a + (b - a) * k / 11 for k in range(1, 11)]
        assert np.allclose(seg[1:-1], expect, atol=1e-12)


def test_single_scatter_point_dense_equals_sparse():
    kp = KeypointList((Keypoint(30.0, 50.0, 0, KeypointRole.SCATTER),))
    assert np.array_equal(dense_directional_mask(kp, (32, 32)).grid, gaussian_sparse_mask(kp, (32, 32)).grid)


def test_degenerate_segment():
    kp = KeypointList((Keypoint(30.0, 50.0, 0, KeypointRole.INFLECTION), Keypoint(30.0, 50.0, 0, KeypointRole.INFLECTION)))
    assert np.array_equal(dense_directional_mask(kp, (32, 32)).grid, gaussian_sparse_mask(kp, (32, 32)).grid)


def test_binarize_threshold():
    hm = Heatmap(np.array([[0.61, 0.59, 0.6, 0.0]]), 4)
    assert binarize(hm).grid.tolist() == [[1.0, 0.0, 1.0, 0.0]]
    assert not binarize(Heatmap(np.zeros((3, 3)), 4)).grid.any()


def test_binarized_peak_is_radius_two_disk():
    hm = binarize(gaussian_sparse_mask([(66, 66)], (33, 33), stride=4)).grid
    rr, cc = np.mgrid[:33, :33]
    disk = (rr - 16) ** 2 + (cc - 16) ** 2 <= 4
    assert np.array_equal(hm.astype(bool), disk)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 63.99), st.floats(0, 47.99)), min_size=1, max_size=6))
def test_sparse_mask_matches_brute_force(points):
    shape = (12, 16)
    hm = gaussian_sparse_mask(points, shape, stride=4).grid
    cells = [to_cell(x, y, 4, shape) for x, y in points]
    assert np.allclose(hm, brute_render(cells, shape), atol=1e-12)
    assert hm.max() == 1.0 and hm.min() >= 0.0


def test_two_bars_six_peaks():
    s = DataSeries("s", SeriesKind.BARS, ("A", "B"), (1.0, 2.0),
                   ((20.0, 40.0, 60.0, 200.0), (120.0, 100.0, 160.0, 200.0)))
    chart = AnnotatedChart(None, ChartType.BAR_VERTICAL, (s,), image_size=(256, 256))
    m = build_mask_set(chart)
    assert int((m.sparse.grid == 1.0).sum()) == 6
    assert len({g for _, _, g in m.kp_cells}) == 2


def test_complements_exact(make_chart):
    for ct in ("line", "scatter", "bar-horizontal", "box-vertical"):
        m = build_mask_set(make_chart(ct, 3))
        assert np.array_equal(m.bg_regress.grid + m.fg_regress.grid, np.ones(m.shape))
        assert np.array_equal(m.bg_class.grid + m.fg_class.grid, np.ones(m.shape))


def test_line_dense_support_matches_polyline_oracle(make_chart):
    chart = make_chart("line", 12)
    m = build_mask_set(chart)
    cells = set()
    for s in chart.data_series:
        for x, y in interpolate_chain(s.geometry):
            cells.add(to_cell(x, y, 4, m.shape))
    oracle = brute_render(sorted(cells), m.shape)
    assert np.allclose(m.fg_regress.grid, oracle, atol=1e-12)
    assert np.array_equal(m.fg_regress.grid > 0, oracle > 0)


def test_offsets_in_unit_square(make_chart):
    m = build_mask_set(make_chart("scatter", 6))
    assert m.offset.min() >= 0.0 and m.offset.max() < 1.0
    kps = extract_keypoints(make_chart("scatter", 6))
    seen = set()
    for p, (r, c, _) in zip(kps, m.kp_cells):
        if (r, c) in seen:
            continue
        seen.add((r, c))
        assert abs(c + m.offset[0, r, c] - p.x / 4) < 1e-9
        assert abs(r + m.offset[1, r, c] - p.y / 4) < 1e-9


def test_owner_map_assigns_nearest_series():
    mk = lambda y, g: tuple(Keypoint(x, y, g, KeypointRole.INFLECTION) for x in (8.0, 100.0))
    kps = KeypointList(mk(20.0, 0) + mk(80.0, 1))
    own = owner_map(kps, (32, 32))
    assert own[5, 10] == 0 and own[20, 10] == 1 and own[31, 31] == -1


def test_embed_cells_cover_dense_support(make_chart):
    chart = make_chart("line", 2)
    m = build_mask_set(chart)
    kps = extract_keypoints(chart)
    owner = owner_map(kps, m.shape)
    n_kp = len(m.kp_cells)
    assert m.embed_cells[:n_kp] == m.kp_cells
    dense = m.embed_cells[n_kp:]
    assert {(r, c) for r, c, _ in dense} == set(zip(*np.nonzero((owner >= 0) & (m.fg_regress.grid >= 0.5))))
    assert all(owner[r, c] == g for r, c, g in dense)
