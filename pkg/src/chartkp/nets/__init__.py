"""Keypoint networks."""

from .backbones import Backbone, BackboneConfig, FAMILIES, pad_to_multiple
from .model import ChartKPNet, NetOutput, image_to_tensor, load_checkpoint, save_checkpoint
from .pooling import DIRECTIONS, CornerPoolBlock, corner_pool

__all__ = [
    "Backbone", "BackboneConfig", "FAMILIES", "pad_to_multiple", "ChartKPNet", "NetOutput",
    "image_to_tensor", "load_checkpoint", "save_checkpoint", "DIRECTIONS", "CornerPoolBlock",
    "corner_pool",
]
