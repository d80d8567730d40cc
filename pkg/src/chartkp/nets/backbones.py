"""Small keypoint backbones: stacked hourglass (HGN), cascaded pyramid (CPN)
and simple deconvolution (SPN) trunks, each with an optional iterative
aggregation encoder and a corner-pooling tail."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import List, Tuple

import torch
import torch.nn.functional as F
from torch import nn

from ..errors import ShapeError
from .pooling import CornerPoolBlock

FAMILIES = ("HGN", "CPN", "SPN")
ENCODER_DEPTH = 3


@dataclass(frozen=True)
class BackboneConfig:
    family: str = "HGN"
    use_corner_pool: bool = False
    use_dla: bool = False
    base_channels: int = 32
    n_stages: int = 2
    stride: int = 4

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}")
        if self.stride < 1 or self.stride & (self.stride - 1):
            raise ValueError("stride must be a power of two")
        if self.base_channels < 8:
            raise ValueError("base_channels must be >= 8")
        if self.n_stages < 1:
            raise ValueError("n_stages must be >= 1")

    @property
    def input_multiple(self) -> int:
        """Input sides must be divisible by this."""
        return self.stride * 2**ENCODER_DEPTH

    def to_dict(self) -> dict:
        return asdict(self)


def conv_bn_relu(cin: int, cout: int, k: int = 3, stride: int = 1) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, k, stride=stride, padding=k // 2, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class Residual(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int = 1):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False),
            nn.BatchNorm2d(cout),
            nn.ReLU(inplace=True),
            nn.Conv2d(cout, cout, 3, padding=1, bias=False),
            nn.BatchNorm2d(cout),
        )
        self.skip = nn.Identity() if cin == cout and stride == 1 else nn.Sequential(
            nn.Conv2d(cin, cout, 1, stride=stride, bias=False), nn.BatchNorm2d(cout))

    def forward(self, x):
        return torch.relu(self.body(x) + self.skip(x))


class AggregationNode(nn.Module):
    """Fuses a level's features with the downsampled previous aggregate."""

    def __init__(self, c: int):
        super().__init__()
        self.fuse = conv_bn_relu(2 * c, c, k=1)

    def forward(self, level, prev):
        return self.fuse(torch.cat([level, F.max_pool2d(prev, 2)], dim=1))


class Encoder(nn.Module):
    """Levels at 1, 1/2, 1/4, 1/8 of the trunk resolution.

    Returns the skip features of the first three levels and the bottom one.
    With aggregation on, every skip (and the input of the next level) is the
    iterative aggregate of all shallower levels instead of the plain level.
    """

    def __init__(self, c: int, use_dla: bool):
        super().__init__()
        self.first = Residual(c, c)
        self.down = nn.ModuleList([Residual(c, c, stride=2) for _ in range(ENCODER_DEPTH)])
        self.nodes = nn.ModuleList([AggregationNode(c) for _ in range(ENCODER_DEPTH)]) if use_dla else None

    def forward(self, x) -> Tuple[List[torch.Tensor], torch.Tensor]:
        feats = [self.first(x)]
        for i, down in enumerate(self.down):
            level = down(feats[-1])
            if self.nodes is not None:
                level = self.nodes[i](level, feats[-1])
            feats.append(level)
        return feats[:-1], feats[-1]


class HourglassStage(nn.Module):
    def __init__(self, c: int, use_dla: bool):
        super().__init__()
        self.enc = Encoder(c, use_dla)
        self.mid = Residual(c, c)
        self.skips = nn.ModuleList([Residual(c, c) for _ in range(ENCODER_DEPTH)])
        self.ups = nn.ModuleList([Residual(c, c) for _ in range(ENCODER_DEPTH)])

    def forward(self, x):
        skips, y = self.enc(x)
        y = self.mid(y)
        for i in reversed(range(ENCODER_DEPTH)):
            y = F.interpolate(y, scale_factor=2, mode="nearest") + self.skips[i](skips[i])
            y = self.ups[i](y)
        return y


class PyramidStage(nn.Module):
    """Global feature pyramid followed by a refine net that concatenates every
    pyramid level (deeper levels get more residual blocks) at full size."""

    def __init__(self, c: int, use_dla: bool):
        super().__init__()
        self.enc = Encoder(c, use_dla)
        self.lateral = nn.ModuleList([conv_bn_relu(c, c, k=1) for _ in range(ENCODER_DEPTH + 1)])
        self.refine = nn.ModuleList(
            [nn.Sequential(*[Residual(c, c) for _ in range(k)]) for k in range(ENCODER_DEPTH + 1)])
        self.fuse = conv_bn_relu(c * (ENCODER_DEPTH + 1), c, k=1)

    def forward(self, x):
        skips, bottom = self.enc(x)
        levels = skips + [bottom]
        p = self.lateral[-1](bottom)
        pyramid = [p]
        for i in reversed(range(ENCODER_DEPTH)):
            p = self.lateral[i](levels[i]) + F.interpolate(p, scale_factor=2, mode="nearest")
            pyramid.insert(0, p)
        size = x.shape[-2:]
        refined = [F.interpolate(self.refine[k](pk), size=size, mode="nearest") if k else self.refine[k](pk)
                   for k, pk in enumerate(pyramid)]
        return self.fuse(torch.cat(refined, dim=1))


class DeconvStage(nn.Module):
    """Encoder then learnable transposed convolutions back to trunk size."""

    def __init__(self, c: int, use_dla: bool):
        super().__init__()
        self.use_dla = use_dla
        self.enc = Encoder(c, use_dla)
        self.deconvs = nn.ModuleList([
            nn.Sequential(nn.ConvTranspose2d(c, c, 4, stride=2, padding=1, bias=False),
                          nn.BatchNorm2d(c), nn.ReLU(inplace=True))
            for _ in range(ENCODER_DEPTH)
        ])

    def forward(self, x):
        skips, y = self.enc(x)
        for i in reversed(range(ENCODER_DEPTH)):
            y = self.deconvs[i](y)
            if self.use_dla:
                y = y + skips[i]
        return y


_STAGES = {"HGN": HourglassStage, "CPN": PyramidStage, "SPN": DeconvStage}


class Backbone(nn.Module):
    """Image (N, 3, H, W) -> trunk features (N, C, H/stride, W/stride)."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.base_channels
        n_down = int(math.log2(cfg.stride))
        stem = [conv_bn_relu(3, c, k=3, stride=2 if n_down else 1)]
        stem += [conv_bn_relu(c, c, k=3, stride=2) for _ in range(max(0, n_down - 1))]
        self.stem = nn.Sequential(*stem, Residual(c, c))
        self.stages = nn.ModuleList([_STAGES[cfg.family](c, cfg.use_dla) for _ in range(cfg.n_stages)])
        self.merges = nn.ModuleList([conv_bn_relu(c, c, k=1) for _ in range(cfg.n_stages - 1)])
        self.corner = CornerPoolBlock(c) if cfg.use_corner_pool else None

    @property
    def out_channels(self) -> int:
        return self.cfg.base_channels

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        if image.ndim != 4 or image.shape[1] != 3:
            raise ShapeError(f"expected N x 3 x H x W input, got {tuple(image.shape)}")
        m = self.cfg.input_multiple
        if image.shape[-1] % m or image.shape[-2] % m:
            raise ShapeError(f"input {tuple(image.shape[-2:])} not divisible by {m}; pad it first")
        x = self.stem(image)
        for i, stage in enumerate(self.stages):
            y = stage(x)
            x = x + self.merges[i](y) if i < len(self.merges) else y
        if self.corner is not None:
            x = self.corner(x)
        return x


def pad_to_multiple(image, multiple: int, value=255):
    """Pad an H x W x 3 array on the bottom/right to multiples of ``multiple``."""
    import numpy as np

    h, w = image.shape[:2]
    ph, pw = (-h) % multiple, (-w) % multiple
    if not ph and not pw:
        return image
    return np.pad(image, ((0, ph), (0, pw), (0, 0)), constant_values=value)
