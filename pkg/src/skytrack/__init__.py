"""Semantically conditioned detection and tracking under UAV-like constraints."""

__version__ = "0.1.0"

from .core import BBox, Detection, Frame, ImagePatch, SemanticQuery, c_box, crop_with_margin, iou

__all__ = [
    "BBox",
    "Detection",
    "Frame",
    "ImagePatch",
    "SemanticQuery",
    "c_box",
    "crop_with_margin",
    "iou",
    "__version__",
]
