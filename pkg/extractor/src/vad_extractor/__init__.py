"""Backbone feature extraction for patch-based anomaly detection.

Walks an MVTec-style dataset category, runs images through selected
intermediate layers of a MobileNetV2 backbone, concatenates the layer
activations into per-position patch descriptors, and exports them in the
portable VADF/manifest formats consumed by downstream scoring tools.
"""

from .errors import ExtractError, LayoutError

__all__ = ["ExtractError", "LayoutError"]
__version__ = "0.1.0"
