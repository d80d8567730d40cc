"""Naming components by matching them to legend patches."""

from __future__ import annotations

from dataclasses import replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch

from ..errors import EmptyBox
from ..postprocess import patch_color


def roi_align(features: torch.Tensor, bbox: Sequence[float], out_size: Tuple[int, int],
              spatial_scale: float = 1.0, samples: int = 2) -> torch.Tensor:
    """Bilinear ROI sampling of a C x H x W map over ``bbox`` (x0, y0, x1, y1).

    Cell (r, c) is centred at continuous position (c + 0.5, r + 0.5). Each of
    the out_size bins averages a ``samples`` x ``samples`` grid of bilinear
    samples; reads outside the map clamp to the border. Returns C x h x w.
    """
    x0, y0, x1, y1 = (float(v) * spatial_scale for v in bbox)
    if not (x1 > x0 and y1 > y0):
        raise EmptyBox(f"empty box {tuple(bbox)}")
    oh, ow = out_size
    if oh < 1 or ow < 1:
        raise ValueError("out_size must be at least 1 x 1")
    feats = torch.as_tensor(features)
    _, h, w = feats.shape
    frac = (torch.arange(samples, dtype=torch.float64) + 0.5) / samples
    ys = y0 + (torch.arange(oh, dtype=torch.float64)[:, None] + frac[None, :]) * (y1 - y0) / oh
    xs = x0 + (torch.arange(ow, dtype=torch.float64)[:, None] + frac[None, :]) * (x1 - x0) / ow

    def axis_weights(coords, n):
        u = (coords.reshape(-1) - 0.5).clamp(0, n - 1)
        i0 = u.floor().long().clamp(max=n - 1)
        i1 = (i0 + 1).clamp(max=n - 1)
        t = (u - i0.to(u.dtype)).to(feats.dtype)
        return i0, i1, t

    r0, r1, ty = axis_weights(ys, h)
    c0, c1, tx = axis_weights(xs, w)
    rows = feats[:, r0] * (1 - ty)[None, :, None] + feats[:, r1] * ty[None, :, None]
    vals = rows[:, :, c0] * (1 - tx)[None, None, :] + rows[:, :, c1] * tx[None, None, :]
    vals = vals.reshape(feats.shape[0], oh, samples, ow, samples)
    return vals.mean(dim=(2, 4))


class ColorLegendEmbedder:
    """Colour codes: soft assignment of an RGB value to a 5x5x5 lattice of
    anchor colours, so cosine similarity falls off with colour distance."""

    def __init__(self, sigma: float = 48.0):
        levels = np.linspace(0, 255, 5)
        self.anchors = np.stack(np.meshgrid(levels, levels, levels, indexing="ij"), -1).reshape(-1, 3)
        self.sigma = sigma

    def code(self, rgb) -> np.ndarray:
        d2 = np.sum((self.anchors - np.asarray(rgb, float)) ** 2, axis=1)
        return np.exp(-d2 / (2 * self.sigma**2))

    def cluster_vectors(self, components) -> np.ndarray:
        return np.stack([self.code(c.rgb if c.rgb is not None else (0, 0, 0)) for c in components])

    def patch_vectors(self, image: np.ndarray, bboxes) -> np.ndarray:
        return np.stack([self.code(patch_color(image, b)) for b in bboxes])


class LearnedLegendEmbedder:
    """Cluster and patch vectors from a trained network's legend head."""

    def __init__(self, model, trunk: torch.Tensor, emb: torch.Tensor, stride: int):
        self.model = model
        self.trunk = trunk
        self.emb = emb
        self.stride = stride

    def cluster_vectors(self, components) -> np.ndarray:
        with torch.no_grad():
            v = self.model.legend.cluster_vectors(self.trunk, self.emb, [c.cells for c in components])
        return v.double().numpy()

    def patch_vectors(self, image, bboxes) -> np.ndarray:
        cells = [tuple(v / self.stride for v in b) for b in bboxes]
        with torch.no_grad():
            v = self.model.legend.patch_vectors(self.trunk, cells)
        return v.double().numpy()


def _cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = a / np.maximum(np.linalg.norm(a, axis=1, keepdims=True), 1e-12)
    b = b / np.maximum(np.linalg.norm(b, axis=1, keepdims=True), 1e-12)
    return a @ b.T


def match_names(cluster_vecs: np.ndarray, patch_vecs: np.ndarray) -> List[int]:
    """Index of the most similar patch per cluster; ties go to the lowest index."""
    sim = _cosine(np.asarray(cluster_vecs, float), np.asarray(patch_vecs, float))
    return [int(np.argmax(row)) for row in sim]


def legend_match(components, legend_pairs, chart, embedder=None, image: Optional[np.ndarray] = None):
    """Name each component after its best-matching legend label.

    Without legend pairs the components are named "series-1", "series-2", ...
    in order. ``chart`` supplies the legend label texts.
    """
    components = list(components)
    if not components:
        return []
    if not legend_pairs:
        return [replace(c, name=f"series-{k + 1}") for k, c in enumerate(components)]
    embedder = embedder or ColorLegendEmbedder()
    image = chart.image if image is None else image
    patches = embedder.patch_vectors(image, [p.bbox for p in legend_pairs])
    clusters = embedder.cluster_vectors(components)
    picks = match_names(clusters, patches)
    names = [chart.text_box(p.label_id).text for p in legend_pairs]
    return [replace(c, name=names[k]) for c, k in zip(components, picks)]
