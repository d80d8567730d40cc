"""Directional running-max (corner) pooling."""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

DIRECTIONS = ("left", "right", "top", "bottom")

# (spatial dim, whether to scan from the far end)
_SCAN = {"left": (-1, True), "right": (-1, False), "top": (-2, True), "bottom": (-2, False)}


def corner_pool(x, direction: str):
    """Running max along one axis.

    left: out[..., y, x] = max over x' >= x; right: max over x' <= x;
    top: max over y' >= y; bottom: max over y' <= y. Accepts tensors or
    arrays with the two spatial dims last.
    """
    if direction not in _SCAN:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    if isinstance(x, np.ndarray):
        return corner_pool(torch.from_numpy(x), direction).numpy()
    dim, reverse = _SCAN[direction]
    if reverse:
        return torch.cummax(x.flip(dim), dim=dim).values.flip(dim)
    return torch.cummax(x, dim=dim).values


def _conv_bn(cin: int, cout: int, k: int = 3, relu: bool = True) -> nn.Sequential:
    layers = [nn.Conv2d(cin, cout, k, padding=k // 2, bias=False), nn.BatchNorm2d(cout)]
    if relu:
        layers.append(nn.ReLU(inplace=True))
    return nn.Sequential(*layers)


class CornerPoolBlock(nn.Module):
    """Sum of a (left + top) and a (right + bottom) pooled branch, each
    direction pooled after its own 3x3 convolution, with a residual path."""

    def __init__(self, channels: int):
        super().__init__()
        self.pre = nn.ModuleDict({d: _conv_bn(channels, channels) for d in DIRECTIONS})
        self.merge = _conv_bn(channels, channels, relu=False)
        self.skip = _conv_bn(channels, channels, k=1, relu=False)
        self.out = _conv_bn(channels, channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        p = {d: corner_pool(self.pre[d](x), d) for d in DIRECTIONS}
        pooled = (p["left"] + p["top"]) + (p["right"] + p["bottom"])
        return self.out(torch.relu(self.merge(pooled) + self.skip(x)))
