"""From predicted heatmaps to candidate keypoints: top-k selection,
connected components, colour filtering, and threshold calibration."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .errors import InsufficientSamples
from .maskgen import Heatmap

EIGHT = np.ones((3, 3), dtype=bool)
HIST_BINS = 32
PEAK_MIN_FRACTION = 0.01
# pixels closer than this to the chart median are treated as background
# when sampling a candidate's colour
COLOR_SAMPLE_TOLERANCE = 16.0


@dataclass(frozen=True)
class CandidatePoint:
    """A keypoint candidate in heatmap-cell units (cell (r, c) spans
    [c, c+1) x [r, r+1))."""

    x: float
    y: float
    confidence: float
    rgb: Optional[Tuple[float, float, float]] = None
    cell: Tuple[int, int] = (0, 0)
    support: int = 1
    class_score: float = 0.0

    def pixel(self, stride: int) -> Tuple[float, float]:
        return self.x * stride, self.y * stride


@dataclass(frozen=True)
class PostprocessParams:
    top_k: int = 1000
    cc_threshold_factor: float = 0.85
    color_discard_factor: float = 0.25
    scatter_keep_factor: float = 0.25

    def __post_init__(self):
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        for name in ("cc_threshold_factor", "color_discard_factor", "scatter_keep_factor"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1]")


def _offset_at(offset: Optional[np.ndarray], r: int, c: int) -> Tuple[float, float]:
    """Sub-cell position of the keypoint; the cell centre when no offset
    map is available."""
    if offset is None:
        return 0.5, 0.5
    return float(offset[0, r, c]), float(offset[1, r, c])


def retained_cells(hm: np.ndarray, params: PostprocessParams) -> np.ndarray:
    """Boolean mask of the top_k cells that also clear the component threshold."""
    flat = hm.ravel()
    order = np.argsort(-flat, kind="stable")[: params.top_k]
    keep = np.zeros(flat.shape, dtype=bool)
    keep[order] = True
    keep &= flat > 0
    keep &= flat >= params.cc_threshold_factor * flat.max()
    return keep.reshape(hm.shape)


def extract_candidates(hm: Heatmap, offset: Optional[np.ndarray] = None,
                       params: PostprocessParams = PostprocessParams(), reduce: bool = True) -> List[CandidatePoint]:
    """Candidates from the strongest cells of a heatmap.

    With ``reduce`` each 8-connected component of retained cells becomes one
    candidate at its confidence-weighted centroid plus the offset at its peak
    cell; without it every retained cell is its own candidate. Results are in
    row-major order of the component's first cell.
    """
    g = np.asarray(hm.grid if isinstance(hm, Heatmap) else hm, dtype=float)
    if g.size == 0 or g.max() <= 0:
        return []
    keep = retained_cells(g, params)
    if not reduce:
        out = []
        for r, c in zip(*np.nonzero(keep)):
            ox, oy = _offset_at(offset, r, c)
            out.append(CandidatePoint(c + ox, r + oy, float(g[r, c]), cell=(int(r), int(c))))
        return out
    labels, n = ndimage.label(keep, structure=EIGHT)
    out = []
    for lab in range(1, n + 1):
        rr, cc = np.nonzero(labels == lab)
        w = g[rr, cc]
        k = int(np.argmax(w))
        pr, pc = int(rr[k]), int(cc[k])
        ox, oy = _offset_at(offset, pr, pc)
        cy = float(np.sum(w * rr) / w.sum())
        cx = float(np.sum(w * cc) / w.sum())
        out.append(CandidatePoint(cx + ox, cy + oy, float(w[k]), cell=(pr, pc), support=len(rr)))
    return out


# ---------------------------------------------------------------- colour

def _region(image: np.ndarray, plot_bbox=None) -> np.ndarray:
    if plot_bbox is None:
        return image
    x0, y0, x1, y1 = (int(round(v)) for v in plot_bbox)
    sub = image[max(0, y0):max(0, y1), max(0, x0):max(0, x1)]
    return sub if sub.size else image


def chart_median(image: np.ndarray, plot_bbox=None) -> np.ndarray:
    px = _region(np.asarray(image), plot_bbox).reshape(-1, 3).astype(float)
    return np.median(px, axis=0)


def histogram_peaks(image: np.ndarray, plot_bbox=None) -> List[np.ndarray]:
    """Mean colours of the joint-histogram bins that are local maxima holding
    at least 1% of the pixels, excluding the bin of the median colour."""
    px = _region(np.asarray(image), plot_bbox).reshape(-1, 3).astype(np.int64)
    width = 256 // HIST_BINS
    b = px // width
    idx = (b[:, 0] * HIST_BINS + b[:, 1]) * HIST_BINS + b[:, 2]
    counts = np.bincount(idx, minlength=HIST_BINS**3).reshape((HIST_BINS,) * 3)
    is_max = (counts == ndimage.maximum_filter(counts, size=3, mode="constant")) & (
        counts >= PEAK_MIN_FRACTION * len(px)) & (counts > 0)
    med_bin = tuple((np.clip(np.median(px, axis=0), 0, 255).astype(np.int64) // width).tolist())
    peaks = []
    for bin_ in zip(*np.nonzero(is_max)):
        if tuple(int(v) for v in bin_) == med_bin:
            continue
        flat = (bin_[0] * HIST_BINS + bin_[1]) * HIST_BINS + bin_[2]
        peaks.append(px[idx == flat].mean(axis=0))
    return peaks


def patch_color(image: np.ndarray, bbox) -> np.ndarray:
    x0, y0, x1, y1 = (int(round(v)) for v in bbox)
    sub = np.asarray(image)[y0:max(y0 + 1, y1), x0:max(x0 + 1, x1)]
    return sub.reshape(-1, 3).astype(float).mean(axis=0)


def reference_distance(image: np.ndarray, legend_patches=None, plot_bbox=None) -> Optional[float]:
    """Distance from the median colour to the nearest mark colour, taken from
    legend patches when given, else from histogram peaks; None if neither."""
    med = chart_median(image, plot_bbox)
    if legend_patches:
        return min(float(np.linalg.norm(patch_color(image, b) - med)) for b in legend_patches)
    peaks = histogram_peaks(image, plot_bbox)
    if not peaks:
        return None
    return min(float(np.linalg.norm(p - med)) for p in peaks)


def _mode_color(pixels: np.ndarray) -> np.ndarray:
    packed = (pixels[:, 0].astype(np.int64) << 16) | (pixels[:, 1].astype(np.int64) << 8) | pixels[:, 2]
    vals, counts = np.unique(packed, return_counts=True)
    v = int(vals[int(np.argmax(counts))])
    return np.array([(v >> 16) & 255, (v >> 8) & 255, v & 255], dtype=float)


def sample_color(image: np.ndarray, x_px: float, y_px: float, radius: int, median: np.ndarray) -> np.ndarray:
    """Most frequent non-background colour in a (2 radius)^2 window around
    (x_px, y_px); the window's median colour when it is all background."""
    h, w = image.shape[:2]
    cx, cy = int(np.floor(x_px)), int(np.floor(y_px))
    win = image[max(0, cy - radius):min(h, cy + radius), max(0, cx - radius):min(w, cx + radius)]
    px = win.reshape(-1, 3)
    if len(px) == 0:
        return median.copy()
    fg = px[np.linalg.norm(px.astype(float) - median, axis=1) > COLOR_SAMPLE_TOLERANCE]
    if len(fg) == 0:
        return np.median(px.astype(float), axis=0)
    return _mode_color(fg)


def attach_colors(cands: Sequence[CandidatePoint], image: np.ndarray, stride: int,
                  plot_bbox=None) -> List[CandidatePoint]:
    image = np.asarray(image)
    med = chart_median(image, plot_bbox)
    out = []
    for c in cands:
        rgb = sample_color(image, c.x * stride, c.y * stride, stride, med)
        out.append(replace(c, rgb=tuple(float(v) for v in rgb)))
    return out


def color_filter(cands: Sequence[CandidatePoint], image: np.ndarray, legend_patches=None,
                 params: PostprocessParams = PostprocessParams(), plot_bbox=None,
                 return_flag: bool = False):
    """Drop candidates whose colour sits within ``color_discard_factor`` of
    the reference distance from the chart median colour.

    With no legend patches and no histogram peaks the candidates pass
    through unchanged and the flag (returned when ``return_flag``) is False.
    """
    med = chart_median(image, plot_bbox)
    ref = reference_distance(image, legend_patches, plot_bbox)
    if ref is None:
        out = list(cands)
        return (out, False) if return_flag else out
    limit = params.color_discard_factor * ref
    out = [c for c in cands if c.rgb is not None and float(np.linalg.norm(np.asarray(c.rgb) - med)) >= limit]
    return (out, True) if return_flag else out


# ---------------------------------------------------------------- calibration

def otsu_threshold(values, bins: int = 256) -> float:
    """Otsu threshold of ``values`` on a ``bins``-bin histogram spanning
    their range. Splits are bin edges; when several splits tie for the
    largest between-class variance the midpoint of the tied edges is
    returned, so a two-valued sample is cut halfway between its values."""
    v = np.asarray(values, dtype=float).ravel()
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        return lo
    counts, edges = np.histogram(v, bins=bins, range=(lo, hi))
    centers = 0.5 * (edges[:-1] + edges[1:])
    w0 = np.cumsum(counts)[:-1].astype(float)
    w1 = v.size - w0
    s0 = np.cumsum(counts * centers)[:-1]
    m0 = s0 / np.maximum(w0, 1)
    m1 = (np.sum(counts * centers) - s0) / np.maximum(w1, 1)
    between = w0 * w1 * (m0 - m1) ** 2
    best = between.max()
    tied = np.nonzero(between >= best * (1 - 1e-12))[0]
    return float(0.5 * (edges[tied[0] + 1] + edges[tied[-1] + 1]))


def calibrate_thresholds(heatmaps: Sequence, base: PostprocessParams = PostprocessParams(),
                         min_samples: int = 10) -> PostprocessParams:
    """Set the component threshold factor from Otsu thresholds of sampled
    validation heatmaps: median(otsu) / median(max), clamped to [0.5, 0.95].
    Degenerate (constant) samples fall back to the default 0.85."""
    if len(heatmaps) < min_samples:
        raise InsufficientSamples(f"need >= {min_samples} heatmaps, got {len(heatmaps)}")
    otsu, peak = [], []
    for hm in heatmaps:
        g = np.asarray(hm.grid if isinstance(hm, Heatmap) else hm, dtype=float)
        if np.ptp(g) == 0 or g.max() <= 0:
            continue
        otsu.append(otsu_threshold(g))
        peak.append(float(g.max()))
    if not otsu:
        return replace(base, cc_threshold_factor=0.85)
    factor = float(np.median(otsu) / np.median(peak))
    return replace(base, cc_threshold_factor=float(np.clip(factor, 0.5, 0.95)))


def dump_postprocess(path, hm: Heatmap, before: Sequence[CandidatePoint], after: Sequence[CandidatePoint],
                     image: np.ndarray, params: PostprocessParams = PostprocessParams()) -> None:
    """Debug panels: heatmap, retained islands, candidates before and after
    the colour filter drawn over the image."""
    from PIL import Image, ImageDraw

    g = np.asarray(hm.grid, dtype=float)
    h, w = image.shape[:2]
    s = hm.stride

    def up(a):
        return Image.fromarray(np.clip(a * 255, 0, 255).astype(np.uint8)).resize((w, h), Image.NEAREST).convert("RGB")

    panels = [up(g / max(g.max(), 1e-12)), up(retained_cells(g, params).astype(float))]
    for cands, color in ((before, (255, 0, 0)), (after, (0, 160, 0))):
        im = Image.fromarray(np.asarray(image, dtype=np.uint8)).copy()
        d = ImageDraw.Draw(im)
        for c in cands:
            x, y = c.pixel(s)
            d.ellipse([x - 2, y - 2, x + 2, y + 2], outline=color)
        panels.append(im)
    strip = Image.new("RGB", (w * len(panels), h))
    for i, p in enumerate(panels):
        strip.paste(p, (i * w, 0))
    strip.save(path)
