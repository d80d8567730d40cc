"""Ground-truth heatmap targets.

Keypoints are placed on the output grid by integer division with the stride;
the fractional remainder goes into the offset target. Gaussians are centred
on the keypoint's cell, so every keypoint cell carries a peak of exactly 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .annotation import extract_keypoints
from .types import AnnotatedChart, Keypoint, KeypointList

DEFAULT_SIGMA = 2.0
DEFAULT_STRIDE = 4
N_INTERP = 10
EMBED_SUPPORT = 0.5  # dense-mask level above which a cell trains the embedding
# Gaussians are truncated at this many sigmas so masks have finite support.
TRUNCATE = 3.0


@dataclass(frozen=True)
class Heatmap:
    grid: np.ndarray
    stride: int

    @property
    def shape(self) -> Tuple[int, int]:
        return self.grid.shape


@dataclass(frozen=True)
class MaskSet:
    """The five training views plus offsets and labelled keypoint cells.

    ``embed_cells`` adds the cells along each group's dense support, labelled
    by owning group, for the embedding loss.

    ``sparse`` keeps the un-binarized sparse Gaussian that ``fg_class`` is
    thresholded from.
    """

    binary_recon: Heatmap
    fg_regress: Heatmap
    bg_regress: Heatmap
    fg_class: Heatmap
    bg_class: Heatmap
    offset: np.ndarray
    kp_cells: Tuple[Tuple[int, int, int], ...]
    sparse: Heatmap
    kp_series: Tuple[int, ...] = ()
    embed_cells: Tuple[Tuple[int, int, int], ...] = ()

    @property
    def shape(self) -> Tuple[int, int]:
        return self.fg_regress.shape

    @property
    def stride(self) -> int:
        return self.fg_regress.stride

    def views(self) -> dict:
        return {
            "binary_recon": self.binary_recon.grid,
            "fg_regress": self.fg_regress.grid,
            "bg_regress": self.bg_regress.grid,
            "fg_class": self.fg_class.grid,
            "bg_class": self.bg_class.grid,
        }

    def __eq__(self, other) -> bool:
        if not isinstance(other, MaskSet):
            return NotImplemented
        a, b = self.views(), other.views()
        return (
            self.stride == other.stride
            and all(np.array_equal(a[k], b[k]) for k in a)
            and np.array_equal(self.offset, other.offset)
            and np.array_equal(self.sparse.grid, other.sparse.grid)
            and self.kp_cells == other.kp_cells
            and self.kp_series == other.kp_series
        )

    __hash__ = None


def grid_shape(image_shape: Sequence[int], stride: int) -> Tuple[int, int]:
    return (math.ceil(image_shape[0] / stride), math.ceil(image_shape[1] / stride))


def to_cell(x: float, y: float, stride: int, shape: Tuple[int, int]) -> Tuple[int, int]:
    """(row, col) of the cell holding pixel position (x, y)."""
    col = min(max(int(math.floor(x / stride)), 0), shape[1] - 1)
    row = min(max(int(math.floor(y / stride)), 0), shape[0] - 1)
    return row, col


def _render_cells(cells: Iterable[Tuple[int, int]], shape: Tuple[int, int], sigma: float) -> np.ndarray:
    """max over cells c of exp(-|p - c|^2 / 2 sigma^2), truncated at TRUNCATE*sigma."""
    seeds = np.ones(shape, dtype=bool)
    any_cell = False
    for r, c in cells:
        seeds[r, c] = False
        any_cell = True
    if not any_cell:
        return np.zeros(shape, dtype=np.float64)
    # distance to the nearest seed; max-combining Gaussians is a function of it
    dist = ndimage.distance_transform_edt(seeds)
    out = np.exp(-(dist**2) / (2.0 * sigma**2))
    out[dist > TRUNCATE * sigma] = 0.0
    return out


def gaussian_sparse_mask(points: Iterable, shape: Tuple[int, int], sigma: float = DEFAULT_SIGMA,
                         stride: int = DEFAULT_STRIDE) -> Heatmap:
    """Gaussian peaks at each keypoint; overlaps combine by max.

    ``points`` holds Keypoints or (x, y) pixel pairs.
    """
    cells = [to_cell(*_xy(p), stride, shape) for p in points]
    return Heatmap(_render_cells(cells, shape, sigma), stride)


def _xy(p) -> Tuple[float, float]:
    if isinstance(p, Keypoint):
        return p.x, p.y
    return float(p[0]), float(p[1])


def interpolate_chain(chain: Sequence[Tuple[float, float]], n_interp: int = N_INTERP) -> List[Tuple[float, float]]:
    """Original vertices plus ``n_interp`` evenly spaced points strictly
    between each consecutive pair."""
    pts = [tuple(map(float, p)) for p in chain]
    out: List[Tuple[float, float]] = []
    m = n_interp + 1
    for i, (a, b) in enumerate(zip(pts[:-1], pts[1:])):
        if i == 0:
            out.append(a)
        for k in range(1, m):
            # written symmetrically so reversing the chain gives identical floats
            out.append(((a[0] * (m - k) + b[0] * k) / m, (a[1] * (m - k) + b[1] * k) / m))
        out.append(b)
    if len(pts) == 1:
        out.append(pts[0])
    return out


def dense_directional_mask(groups: KeypointList, shape: Tuple[int, int], sigma: float = DEFAULT_SIGMA,
                           n_interp: int = N_INTERP, stride: int = DEFAULT_STRIDE) -> Heatmap:
    pts: List[Tuple[float, float]] = []
    for chain in groups.chains():
        pts.extend(interpolate_chain([(p.x, p.y) for p in chain], n_interp))
    return gaussian_sparse_mask(pts, shape, sigma, stride)


def binarize(hm: Heatmap, threshold: float = 0.6) -> Heatmap:
    return Heatmap((hm.grid >= threshold).astype(np.float64), hm.stride)


def owner_map(kps: KeypointList, shape: Tuple[int, int], sigma: float = DEFAULT_SIGMA,
              n_interp: int = N_INTERP, stride: int = DEFAULT_STRIDE) -> np.ndarray:
    """Group id owning each cell (-1 where no group's dense mask reaches).

    A cell belongs to the group whose dense mask is strongest there; ties go
    to the lowest group id.
    """
    gids = kps.group_ids()
    best = np.zeros(shape)
    owner = np.full(shape, -1, dtype=np.int64)
    for gid in gids:
        sub = KeypointList(kps.group(gid))
        m = dense_directional_mask(sub, shape, sigma, n_interp, stride).grid
        take = m > best
        owner[take] = gid
        best = np.maximum(best, m)
    return owner


def build_mask_set(gt: AnnotatedChart, shape: Tuple[int, int] = None, stride: int = DEFAULT_STRIDE,
                   sigma: float = DEFAULT_SIGMA, keypoints: KeypointList = None) -> MaskSet:
    """All training targets for one chart.

    ``shape`` is the heatmap grid shape; it defaults to the image size divided
    by ``stride`` (rounded up).
    """
    if shape is None:
        shape = grid_shape(gt.image_size, stride)
    kps = keypoints if keypoints is not None else extract_keypoints(gt)
    sparse = gaussian_sparse_mask(kps, shape, sigma, stride)
    fg_class = binarize(sparse)
    fg_regress = dense_directional_mask(kps, shape, sigma, N_INTERP, stride)
    offset = np.zeros((2,) + tuple(shape), dtype=np.float64)
    cells = []
    series = []
    seen = set()
    for p in kps:
        r, c = to_cell(p.x, p.y, stride, shape)
        if (r, c) not in seen:
            seen.add((r, c))
            offset[0, r, c] = min(max(p.x / stride - c, 0.0), np.nextafter(1.0, 0.0))
            offset[1, r, c] = min(max(p.y / stride - r, 0.0), np.nextafter(1.0, 0.0))
        cells.append((r, c, p.group_id))
        series.append(p.series)
    owner = owner_map(kps, shape, sigma, N_INTERP, stride)
    support = (owner >= 0) & (fg_regress.grid >= EMBED_SUPPORT)
    dense = [(int(r), int(c), int(owner[r, c])) for r, c in zip(*np.nonzero(support))]
    return MaskSet(
        binary_recon=fg_class,
        fg_regress=fg_regress,
        bg_regress=Heatmap(1.0 - fg_regress.grid, stride),
        fg_class=fg_class,
        bg_class=Heatmap(1.0 - fg_class.grid, stride),
        offset=offset,
        kp_cells=tuple(cells),
        sparse=sparse,
        kp_series=tuple(series),
        embed_cells=tuple(cells) + tuple(dense),
    )


def dump_mask_set(masks: MaskSet, path, image: np.ndarray = None) -> None:
    """Save the views side by side as one grayscale PNG strip."""
    from PIL import Image

    panels = [masks.sparse.grid, *masks.views().values()]
    h, w = masks.shape
    tiles = [np.clip(p * 255.0, 0, 255).astype(np.uint8) for p in panels]
    if image is not None:
        small = np.asarray(Image.fromarray(np.asarray(image)).convert("L").resize((w, h)))
        tiles.insert(0, small)
    strip = np.concatenate([np.pad(t, ((0, 0), (0, 2)), constant_values=128) for t in tiles], axis=1)
    Image.fromarray(strip).resize((strip.shape[1] * 2, strip.shape[0] * 2), Image.NEAREST).save(path)
