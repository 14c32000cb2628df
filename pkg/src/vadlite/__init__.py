"""Edge-oriented visual anomaly detection over pre-extracted patch features.

Two methods: a diagonal-Gaussian Mahalanobis scorer (with the full-covariance
baseline for comparison) and a product-quantized memory bank with two-stage
nearest-neighbor search, plus byte-exact storage accounting and AUROC
evaluation.
"""

from .errors import FormatError, NumericError, ValidationError, VadError

__all__ = ["VadError", "ValidationError", "FormatError", "NumericError"]
__version__ = "0.1.0"
