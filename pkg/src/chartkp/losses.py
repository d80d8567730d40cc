"""Training objectives: the five-view keypoint loss, offsets, the two
contrastive losses for keypoint grouping, and the final weighted blend."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from .errors import InsufficientKeypointsWarning, NonFiniteLoss, ShapeMismatch
from .heatmaps import VIEW_NAMES
from .maskgen import MaskSet

CONTRASTIVE_KINDS = ("push_pull", "multi_similarity")
MAX_TRIPLETS = 512
MAX_MS_CELLS = 512
MS_SCALE = 4.0  # cosine class-score scale; low enough that the loss keeps separating groups
LEGEND_SCALE = 10.0  # same role for cluster-to-legend-patch scores


@dataclass(frozen=True)
class LossWeights:
    w_kp: float = 0.7
    w_contrastive: float = 0.2
    w_type: float = 0.1
    w_fg: float = 0.99
    w_bg: float = 0.01

    def __post_init__(self):
        if not math.isclose(self.w_kp + self.w_contrastive + self.w_type, 1.0, abs_tol=1e-9):
            raise ValueError("w_kp + w_contrastive + w_type must equal 1")
        if not math.isclose(self.w_fg + self.w_bg, 1.0, abs_tol=1e-9):
            raise ValueError("w_fg + w_bg must equal 1")


# ---------------------------------------------------------------- pairwise losses

def push_pull_loss(d_p, d_n, Y, m: float = 0.3):
    """(1 - Y) * max(0, d_p - d_n + m)^2 + Y * max(0, d_n - d_p + m)^2.

    Works elementwise on floats, arrays or tensors.
    """
    if m < 0:
        raise ValueError("margin must be >= 0")
    if isinstance(d_p, torch.Tensor) or isinstance(d_n, torch.Tensor):
        relu = torch.relu
    else:
        relu = lambda v: np.maximum(0.0, v)  # noqa: E731
    return (1 - Y) * relu(d_p - d_n + m) ** 2 + Y * relu(d_n - d_p + m) ** 2


def multi_similarity_loss(f: torch.Tensor, y: torch.Tensor, alpha: float = 1.0):
    """Discriminative softmax term plus pairwise similarity regularizer.

    ``f`` is N x C class scores, ``y`` the N labels. With s_i = f[i, y_i]:
    L_dis = -sum_i log softmax(f_i)[y_i];
    L_sim = 1/(2N) sum_i sum_j [y_i = y_j] (1 - (s_i - s_j) / (max(0, s_i - s_j) + alpha)),
    self-pairs included. Returns (L_dis, L_sim, L_dis + L_sim).
    """
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    f = torch.as_tensor(f)
    y = torch.as_tensor(y, dtype=torch.long)
    n, c = f.shape
    if torch.any((y < 0) | (y >= c)):
        raise ValueError("labels must lie in [0, C)")
    l_dis = -torch.log_softmax(f, dim=1).gather(1, y[:, None]).sum()
    s = f.gather(1, y[:, None]).squeeze(1)
    diff = s[:, None] - s[None, :]
    same = (y[:, None] == y[None, :]).to(f.dtype)
    terms = 1.0 - diff / (torch.relu(diff) + alpha)
    l_sim = (same * terms).sum() / (2.0 * n)
    return l_dis, l_sim, l_dis + l_sim


# ---------------------------------------------------------------- keypoint loss

@dataclass
class TargetBatch:
    views: torch.Tensor  # n, 5, h, w
    offset: torch.Tensor  # n, 2, h, w
    kp_mask: torch.Tensor  # n, h, w (bool): cells holding a keypoint
    kp_cells: List[Tuple[Tuple[int, int, int], ...]]
    embed_cells: Optional[List[Tuple[Tuple[int, int, int], ...]]] = None  # defaults to kp_cells


def masks_to_targets(masks: Sequence[MaskSet], dtype=torch.float32) -> TargetBatch:
    views = np.stack([np.stack([m.views()[k] for k in VIEW_NAMES]) for m in masks])
    offset = np.stack([m.offset for m in masks])
    kp_mask = np.zeros((len(masks),) + masks[0].shape, dtype=bool)
    for i, m in enumerate(masks):
        for r, c, _ in m.kp_cells:
            kp_mask[i, r, c] = True
    return TargetBatch(torch.as_tensor(views, dtype=dtype), torch.as_tensor(offset, dtype=dtype),
                       torch.as_tensor(kp_mask), [m.kp_cells for m in masks],
                       [m.embed_cells or m.kp_cells for m in masks])


def weighted_bce(probs: torch.Tensor, target: torch.Tensor, fg: torch.Tensor, w: LossWeights) -> torch.Tensor:
    """Pixelwise cross-entropy weighted w_fg on foreground pixels, w_bg
    elsewhere, normalized by the pixel count."""
    weight = torch.where(fg, torch.full_like(probs, w.w_fg), torch.full_like(probs, w.w_bg))
    return F.binary_cross_entropy(probs, target, weight=weight, reduction="mean")


def spaden_kp_loss(logits: torch.Tensor, offset: torch.Tensor, target: TargetBatch,
                   w: LossWeights = LossWeights()) -> Tuple[torch.Tensor, Dict[str, torch.Tensor]]:
    """Aggregated keypoint loss: mean of the five view losses plus the
    offset loss.

    binary_recon uses cross-entropy on logits; the regression views squared
    error on activations; the classification views weighted cross-entropy
    with foreground = cells where the binarized sparse target is set.
    The offset term is an L1 loss over keypoint cells only.
    """
    if logits.shape != target.views.shape or offset.shape != target.offset.shape:
        raise ShapeMismatch(f"prediction {tuple(logits.shape)} vs target {tuple(target.views.shape)}")
    probs = torch.sigmoid(logits)
    t = target.views
    fg = t[:, VIEW_NAMES.index("fg_class")] > 0.5
    parts = {
        "binary_recon": F.binary_cross_entropy_with_logits(logits[:, 0], t[:, 0]),
        "fg_regress": F.mse_loss(probs[:, 1], t[:, 1]),
        "bg_regress": F.mse_loss(probs[:, 2], t[:, 2]),
        "fg_class": weighted_bce(probs[:, 3], t[:, 3], fg, w),
        "bg_class": weighted_bce(probs[:, 4], t[:, 4], fg, w),
    }
    mask = target.kp_mask.unsqueeze(1).expand_as(offset)
    n_kp = target.kp_mask.sum()
    if n_kp > 0:
        parts["offset"] = (offset - target.offset).abs()[mask].sum() / (2 * n_kp)
    else:
        parts["offset"] = offset.sum() * 0.0
    agg = sum(parts[k] for k in VIEW_NAMES) / len(VIEW_NAMES) + parts["offset"]
    return agg, parts


# ---------------------------------------------------------------- contrastive

def _unique_cells(kp_cells) -> Tuple[np.ndarray, np.ndarray]:
    seen, rc, groups = set(), [], []
    for r, c, g in kp_cells:
        if (r, c) in seen:
            continue
        seen.add((r, c))
        rc.append((r, c))
        groups.append(g)
    return np.asarray(rc, dtype=np.int64).reshape(-1, 2), np.asarray(groups, dtype=np.int64)


def batch_contrastive_loss(emb: torch.Tensor, kp_cells, kind: str = "multi_similarity", m: float = 0.3,
                           alpha: float = 1.0, generator: Optional[torch.Generator] = None,
                           max_pairs: int = MAX_TRIPLETS, scale: float = MS_SCALE) -> Tuple[torch.Tensor, bool]:
    """Contrastive loss over one image's labelled keypoint cells.

    ``emb`` is D x H x W; ``kp_cells`` holds (row, col, group) triples.
    Returns (loss, ok); ok is False (loss 0, warning issued) when fewer than
    two distinct cells are labelled. ``scale`` multiplies the cosine class
    scores of the MS variant.
    """
    if kind not in CONTRASTIVE_KINDS:
        raise ValueError(f"kind must be one of {CONTRASTIVE_KINDS}")
    rc, groups = _unique_cells(kp_cells)
    zero = emb.sum() * 0.0
    if len(rc) < 2:
        warnings.warn("fewer than two labelled keypoint cells", InsufficientKeypointsWarning, stacklevel=2)
        return zero, False
    if len(rc) > MAX_MS_CELLS:
        idx = torch.randperm(len(rc), generator=generator)[:MAX_MS_CELLS].numpy()
        rc, groups = rc[np.sort(idx)], groups[np.sort(idx)]
    e = emb[:, torch.as_tensor(rc[:, 0]), torch.as_tensor(rc[:, 1])].T  # k, d
    e = F.normalize(e, dim=1, eps=1e-8)
    _, labels = np.unique(groups, return_inverse=True)
    y = torch.as_tensor(labels, dtype=torch.long)
    if kind == "push_pull":
        return _push_pull_batch(e, y, m, generator, max_pairs), True
    n_cls = int(y.max()) + 1
    onehot = F.one_hot(y, n_cls).to(e.dtype)
    centroids = F.normalize(onehot.T @ e, dim=1, eps=1e-8)
    f = scale * (e @ centroids.T)
    _, _, total = multi_similarity_loss(f, y, alpha)
    return total / len(y), True


def _push_pull_batch(e: torch.Tensor, y: torch.Tensor, m: float, generator, max_pairs: int) -> torch.Tensor:
    """Triplets (anchor, positive, negative) scored with the Y = 0 branch;
    single-group images reduce to pulling positives together."""
    k = len(y)
    same = y[:, None] == y[None, :]
    eye = torch.eye(k, dtype=torch.bool)
    pos = torch.nonzero(same & ~eye)
    d = torch.cdist(e, e)
    if torch.all(same):
        if len(pos) > max_pairs:
            pos = pos[torch.randperm(len(pos), generator=generator)[:max_pairs]]
        return (d[pos[:, 0], pos[:, 1]] ** 2).mean()
    if len(pos) == 0:
        # every group is a single cell: push distinct groups at least m apart
        neg = torch.nonzero(~same)
        if len(neg) > max_pairs:
            neg = neg[torch.randperm(len(neg), generator=generator)[:max_pairs]]
        return push_pull_loss(torch.zeros(len(neg), dtype=e.dtype), d[neg[:, 0], neg[:, 1]], 0, m).mean()
    if len(pos) > max_pairs:
        pos = pos[torch.randperm(len(pos), generator=generator)[:max_pairs]]
    a, p = pos[:, 0], pos[:, 1]
    # one random negative per (anchor, positive) pair
    neg_w = (~same[a]).to(e.dtype)
    n = torch.multinomial(neg_w, 1, generator=generator).squeeze(1)
    return push_pull_loss(d[a, p], d[a, n], 0, m).mean()


def legend_loss(cluster_vecs: torch.Tensor, patch_vecs: torch.Tensor, labels: torch.Tensor,
                alpha: float = 1.0) -> torch.Tensor:
    """Multi-similarity loss with legend patches as classes."""
    f = LEGEND_SCALE * (F.normalize(cluster_vecs, dim=1) @ F.normalize(patch_vecs, dim=1).T)
    _, _, total = multi_similarity_loss(f, labels, alpha)
    return total / len(labels)


# ---------------------------------------------------------------- blend

def total_loss(kp, contrastive, type_ce, w: LossWeights = LossWeights()):
    values = [kp, contrastive, type_ce]
    for v in values:
        if not bool(torch.isfinite(torch.as_tensor(v)).all()):
            raise NonFiniteLoss(f"non-finite loss component (kp={float(kp)}, "
                                f"contrastive={float(contrastive)}, type={float(type_ce)})")
    return w.w_kp * kp + w.w_contrastive * contrastive + w.w_type * type_ce
