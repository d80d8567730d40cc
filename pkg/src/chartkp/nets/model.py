"""Heads on top of the trunk: five heatmap views, offsets, chart type, the
cross-view attention embedding, and the legend patch/cluster embedder."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..heatmaps import VIEW_NAMES, EmbeddingMap, HeatmapSet
from ..types import CHART_TYPES
from .backbones import Backbone, BackboneConfig, conv_bn_relu

CHECKPOINT_VERSION = 1
EMBED_DIM = 32


class ViewHead(nn.Module):
    def __init__(self, c: int, out: int = 1, zero_init: bool = False):
        super().__init__()
        self.hidden = nn.Conv2d(c, c, 3, padding=1)
        self.final = nn.Conv2d(c, out, 1)
        if zero_init:
            nn.init.zeros_(self.final.weight)
            nn.init.zeros_(self.final.bias)

    def forward(self, x):
        return self.final(torch.relu(self.hidden(x)))


class TypeHead(nn.Module):
    """Two 1x1 conv-BN layers, global average pooling, linear classifier."""

    def __init__(self, c: int, n_types: int = len(CHART_TYPES)):
        super().__init__()
        self.body = nn.Sequential(conv_bn_relu(c, c, k=1), conv_bn_relu(c, c, k=1))
        self.fc = nn.Linear(c, n_types)

    def forward(self, x):
        return self.fc(self.body(x).mean(dim=(-2, -1)))


class CrossViewAttention(nn.Module):
    """Single-head attention with queries from the trunk and keys/values from
    the trunk modulated by each activated view; the five outputs are summed,
    added to the queries (residual) and projected to the embedding size.

    Keys and values are average-pooled by ``kv_pool`` to bound the size of
    the attention matrix.
    """

    def __init__(self, c: int, dim: int = EMBED_DIM, kv_pool: int = 4):
        super().__init__()
        self.dim = dim
        self.kv_pool = kv_pool
        self.q = nn.Conv2d(c, dim, 1)
        self.k = nn.Conv2d(c, dim, 1)
        self.v = nn.Conv2d(c, dim, 1)
        self.proj = nn.Conv2d(dim, dim, 1)

    def forward(self, trunk: torch.Tensor, views: torch.Tensor) -> torch.Tensor:
        n, _, h, w = trunk.shape
        nv = views.shape[1]
        q_map = self.q(trunk)
        q = q_map.flatten(2).transpose(1, 2)  # n, hw, d
        cond = (trunk.unsqueeze(1) * views.unsqueeze(2)).flatten(0, 1)  # n*nv, c, h, w
        if self.kv_pool > 1:
            cond = F.avg_pool2d(cond, self.kv_pool, ceil_mode=True)
        k = self.k(cond).flatten(2)  # n*nv, d, m
        v = self.v(cond).flatten(2)
        k = k.view(n, nv, self.dim, -1)
        v = v.view(n, nv, self.dim, -1)
        attn = torch.softmax(torch.einsum("npd,nvdm->nvpm", q, k) / math.sqrt(self.dim), dim=-1)
        out = torch.einsum("nvpm,nvdm->ndp", attn, v)  # summed over views
        # the residual keeps local trunk features, which attention averages away
        return self.proj(out.view(n, self.dim, h, w) + q_map)


def contrastive_feature_map(module: CrossViewAttention, trunk: torch.Tensor, views: torch.Tensor) -> torch.Tensor:
    return module(trunk, views)


class LegendEmbedder(nn.Module):
    """Embeds keypoint clusters and legend patches into a shared space.

    Cluster vector: linear mix of [mean embedding, mean trunk feature] over
    the cluster cells followed by a per-channel affine (batch norm).
    Patch vector: 3x3 bilinear ROI sample of the trunk, flattened, projected.
    """

    def __init__(self, c: int, dim: int = EMBED_DIM, out: int = EMBED_DIM, roi: int = 3):
        super().__init__()
        self.roi = roi
        self.cluster = nn.Linear(dim + c, out)
        self.cluster_bn = nn.BatchNorm1d(out)
        self.patch = nn.Linear(c * roi * roi, out)

    def cluster_vectors(self, trunk: torch.Tensor, emb: torch.Tensor, cells: Sequence[np.ndarray]) -> torch.Tensor:
        """``trunk`` C x H x W, ``emb`` D x H x W, ``cells`` one (k, 2) row/col array per cluster."""
        feats = []
        for rc in cells:
            r = torch.as_tensor(np.asarray(rc)[:, 0], dtype=torch.long)
            c = torch.as_tensor(np.asarray(rc)[:, 1], dtype=torch.long)
            feats.append(torch.cat([emb[:, r, c].mean(1), trunk[:, r, c].mean(1)]))
        x = self.cluster(torch.stack(feats))
        if self.training and x.shape[0] < 2:
            # batch statistics need two samples; fall back to running stats
            return F.batch_norm(x, self.cluster_bn.running_mean, self.cluster_bn.running_var,
                                self.cluster_bn.weight, self.cluster_bn.bias, False)
        return self.cluster_bn(x)

    def patch_vectors(self, trunk: torch.Tensor, boxes_cells: Sequence[Sequence[float]]) -> torch.Tensor:
        from ..reconstruct.legend import roi_align

        patches = [roi_align(trunk, box, (self.roi, self.roi)).flatten() for box in boxes_cells]
        return self.patch(torch.stack(patches))


@dataclass
class NetOutput:
    trunk: torch.Tensor
    logits: torch.Tensor  # n, 5, h, w
    probs: torch.Tensor
    offset: torch.Tensor  # n, 2, h, w
    type_logits: torch.Tensor  # n, 5
    embeddings: torch.Tensor  # n, d, h, w

    def heatmap_set(self, i: int, stride: int) -> HeatmapSet:
        probs = self.probs[i].detach().double().numpy()
        logits = self.logits[i].detach().double().numpy()
        return HeatmapSet(
            views={name: probs[k] for k, name in enumerate(VIEW_NAMES)},
            offset=self.offset[i].detach().double().numpy(),
            type_logits=self.type_logits[i].detach().double().numpy(),
            stride=stride,
            logits={name: logits[k] for k, name in enumerate(VIEW_NAMES)},
        )

    def embedding_map(self, i: int) -> EmbeddingMap:
        return EmbeddingMap(self.embeddings[i].detach().double().numpy())


class ChartKPNet(nn.Module):
    """One network for every chart type: a trunk read by all heads."""

    def __init__(self, cfg: BackboneConfig = BackboneConfig(), embed_dim: int = EMBED_DIM,
                 kv_pool: int = 4, zero_init_heads: bool = False):
        super().__init__()
        self.cfg = cfg
        self.embed_dim = embed_dim
        self.kv_pool = kv_pool
        c = cfg.base_channels
        self.backbone = Backbone(cfg)
        self.views = nn.ModuleList([ViewHead(c, 1, zero_init_heads) for _ in VIEW_NAMES])
        self.offset = ViewHead(c, 2, zero_init_heads)
        self.type_head = TypeHead(c)
        self.attention = CrossViewAttention(c, embed_dim, kv_pool)
        self.legend = LegendEmbedder(c, embed_dim)

    def forward(self, image: torch.Tensor) -> NetOutput:
        trunk = self.backbone(image)
        logits = torch.cat([head(trunk) for head in self.views], dim=1)
        probs = torch.sigmoid(logits)
        offset = torch.sigmoid(self.offset(trunk))
        emb = contrastive_feature_map(self.attention, trunk, probs)
        return NetOutput(trunk, logits, probs, offset, self.type_head(trunk), emb)

    def hparams(self) -> dict:
        return {"backbone": self.cfg.to_dict(), "embed_dim": self.embed_dim, "kv_pool": self.kv_pool}


def image_to_tensor(images: Sequence[np.ndarray]) -> torch.Tensor:
    arr = np.stack([np.asarray(im, dtype=np.float32) for im in images])
    return torch.from_numpy((arr / 255.0 - 0.5) / 0.25).permute(0, 3, 1, 2).contiguous()


def save_checkpoint(model: ChartKPNet, path, extra: Optional[dict] = None) -> None:
    blob = {"format_version": CHECKPOINT_VERSION, "hparams": model.hparams(),
            "state_dict": model.state_dict(), "extra": extra or {}}
    torch.save(blob, Path(path))


def load_checkpoint(path) -> tuple:
    """Returns (model in eval mode, extra dict)."""
    blob = torch.load(Path(path), map_location="cpu", weights_only=False)
    if blob.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {blob.get('format_version')}")
    hp = blob["hparams"]
    model = ChartKPNet(BackboneConfig(**hp["backbone"]), hp["embed_dim"], hp["kv_pool"])
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model, blob.get("extra", {})
