"""Keypoint-based chart data extraction."""

__version__ = "0.1.0"
