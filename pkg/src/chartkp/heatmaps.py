"""Per-chart prediction containers consumed by post-processing.

These are plain numpy views of one image's network output, so the inference
tail can run on model predictions and on injected ground truth alike.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from .maskgen import Heatmap, MaskSet, owner_map
from .types import CHART_TYPES, ChartType, KeypointList

VIEW_NAMES = ("binary_recon", "fg_regress", "bg_regress", "fg_class", "bg_class")


@dataclass(frozen=True)
class HeatmapSet:
    """Five activated heatmap views, offsets and chart-type logits.

    ``logits`` holds the pre-activation maps when they are available.
    """

    views: Dict[str, np.ndarray]
    offset: np.ndarray
    type_logits: np.ndarray
    stride: int
    logits: Optional[Dict[str, np.ndarray]] = None

    def __post_init__(self):
        shapes = {v.shape for v in self.views.values()}
        if set(self.views) != set(VIEW_NAMES) or len(shapes) != 1:
            raise ValueError("need five views sharing one shape")
        if self.offset.shape != (2,) + self.shape:
            raise ValueError("offset must be 2 x H x W")

    @property
    def shape(self) -> Tuple[int, int]:
        return next(iter(self.views.values())).shape

    def heatmap(self, name: str) -> Heatmap:
        return Heatmap(self.views[name], self.stride)

    @property
    def fg_regress(self) -> Heatmap:
        return self.heatmap("fg_regress")

    @property
    def fg_class(self) -> Heatmap:
        return self.heatmap("fg_class")

    @property
    def chart_type(self) -> ChartType:
        return CHART_TYPES[int(np.argmax(self.type_logits))]

    @classmethod
    def from_mask_set(cls, masks: MaskSet, chart_type: ChartType) -> "HeatmapSet":
        """Ground-truth targets posing as predictions.

        The classification views use the soft sparse Gaussian rather than its
        binarization so peaks keep a meaningful confidence ordering. Offsets
        away from keypoint cells are set to the cell centre.
        """
        sparse = masks.sparse.grid
        views = {
            "binary_recon": sparse,
            "fg_regress": masks.fg_regress.grid,
            "bg_regress": masks.bg_regress.grid,
            "fg_class": sparse,
            "bg_class": 1.0 - sparse,
        }
        type_logits = np.zeros(len(CHART_TYPES))
        type_logits[chart_type.index] = 1.0
        # offsets are only defined at keypoint cells; elsewhere use the centre
        offset = np.full_like(masks.offset, 0.5)
        for r, c, _ in masks.kp_cells:
            offset[:, r, c] = masks.offset[:, r, c]
        return cls(views, offset, type_logits, masks.stride)


@dataclass(frozen=True)
class EmbeddingMap:
    grid: np.ndarray  # D x H x W

    def __post_init__(self):
        if self.grid.ndim != 3 or not np.all(np.isfinite(self.grid)):
            raise ValueError("embedding grid must be a finite D x H x W array")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.grid.shape[1:]

    def at(self, row: int, col: int) -> np.ndarray:
        return self.grid[:, row, col]


def oracle_embeddings(kps: KeypointList, shape: Tuple[int, int], stride: int) -> EmbeddingMap:
    """One-hot group ids: each cell carries the indicator of the group whose
    dense mask dominates it; unowned cells are zero."""
    owner = owner_map(kps, shape, stride=stride)
    gids = kps.group_ids()
    grid = np.zeros((max(1, len(gids)),) + tuple(shape))
    for k, gid in enumerate(gids):
        grid[k][owner == gid] = 1.0
    return EmbeddingMap(grid)
