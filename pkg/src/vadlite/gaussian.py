"""Per-position Gaussian models of normal patch descriptors.

Two regimes: the full-covariance baseline (Mahalanobis with a precomputed
precision matrix, O(d^2) per query) and the diagonal variant that keeps only
a variance vector (O(d) per query).

Model files ("VADG") are little-endian binary: magic, version u32, kind u8
(0=full, 1=diag), H u32, W u32, d u32, epsilon f32, then row-major
per-position payload (diag: d means, d variances; full: d means, d^2
covariance, d^2 precision).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import FormatError, NumericError, ValidationError
from .features import FeatureGrid

MODEL_MAGIC = b"VADG"
MODEL_VERSION = 1
KIND_FULL = 0
KIND_DIAG = 1
_HEADER = struct.Struct("<4sIBIIIf")
HEADER_BYTES = _HEADER.size

DEFAULT_EPSILON = 0.01


@dataclass
class FullGaussianGrid:
    """Per-position mean, covariance, and precomputed precision.

    precision is None only when fitting was asked to skip the inversion
    (moment inspection); scoring requires it.
    """

    mean: np.ndarray       # (H, W, d)
    cov: np.ndarray        # (H, W, d, d)
    precision: np.ndarray  # (H, W, d, d)
    regularizer: float

    @property
    def height(self) -> int:
        return self.mean.shape[0]

    @property
    def width(self) -> int:
        return self.mean.shape[1]

    @property
    def dim(self) -> int:
        return self.mean.shape[2]


@dataclass
class DiagGaussianGrid:
    """Per-position mean and regularized variance vector."""

    mean: np.ndarray  # (H, W, d)
    var: np.ndarray   # (H, W, d)
    epsilon: float

    @property
    def height(self) -> int:
        return self.mean.shape[0]

    @property
    def width(self) -> int:
        return self.mean.shape[1]

    @property
    def dim(self) -> int:
        return self.mean.shape[2]


GaussianGrid = Union[FullGaussianGrid, DiagGaussianGrid]


def _stack_train(train_grids: list[FeatureGrid]) -> np.ndarray:
    if len(train_grids) < 2:
        raise ValidationError(f"need at least 2 training grids, got {len(train_grids)}")
    shape = train_grids[0].patches.shape
    for g in train_grids[1:]:
        if g.patches.shape != shape:
            raise ValidationError(f"training grid shape mismatch: {g.patches.shape} vs {shape}")
    return np.stack([g.patches for g in train_grids]).astype(np.float64)  # (N, H, W, d)


def fit_full(
    train_grids: list[FeatureGrid],
    regularizer: float = DEFAULT_EPSILON,
    compute_precision: bool = True,
) -> FullGaussianGrid:
    """Sample mean and unbiased covariance per position, plus regularizer*I.

    The precision matrix is inverted once here so scoring never inverts;
    pass compute_precision=False to inspect raw moments (e.g. regularizer 0
    on degenerate data, where the inversion would rightly fail).
    """
    x = _stack_train(train_grids)
    n, h, w, d = x.shape
    mean = x.mean(axis=0)
    centered = x - mean
    cov = np.einsum("nhwi,nhwj->hwij", centered, centered) / (n - 1)
    cov += regularizer * np.eye(d)
    precision = None
    if compute_precision:
        try:
            precision = np.linalg.inv(cov)
        except np.linalg.LinAlgError as e:
            raise NumericError(f"singular covariance after regularization {regularizer}: {e}") from e
        if not np.isfinite(precision).all():
            raise NumericError("non-finite precision matrix")
    return FullGaussianGrid(mean=mean, cov=cov, precision=precision, regularizer=float(regularizer))


def fit_diag(train_grids: list[FeatureGrid], epsilon: float = DEFAULT_EPSILON) -> DiagGaussianGrid:
    """Per-position, per-dimension unbiased variance plus epsilon."""
    if epsilon <= 0:
        raise ValidationError(f"epsilon must be > 0, got {epsilon}")
    x = _stack_train(train_grids)
    n = x.shape[0]
    mean = x.mean(axis=0)
    var = ((x - mean) ** 2).sum(axis=0) / (n - 1) + epsilon
    return DiagGaussianGrid(mean=mean, var=var, epsilon=float(epsilon))


def _check_query(x: np.ndarray, pos: tuple[int, int], model: GaussianGrid) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.dim,):
        raise ValidationError(f"query has shape {x.shape}, model dim is {model.dim}")
    i, j = pos
    if not (0 <= i < model.height and 0 <= j < model.width):
        raise ValidationError(f"position {pos} out of range for {model.height}x{model.width} grid")
    return x


def mahalanobis_full(x: np.ndarray, pos: tuple[int, int], model: FullGaussianGrid) -> float:
    """(x - mu)^T Sigma^-1 (x - mu) at one position."""
    x = _check_query(x, pos, model)
    if model.precision is None:
        raise ValidationError("model has no precision matrices; refit with compute_precision=True")
    i, j = pos
    delta = x - model.mean[i, j]
    return float(delta @ model.precision[i, j] @ delta)


def mahalanobis_diag(x: np.ndarray, pos: tuple[int, int], model: DiagGaussianGrid) -> float:
    """sum_k (x_k - mu_k)^2 / sigma_k^2 at one position."""
    x = _check_query(x, pos, model)
    i, j = pos
    delta = x - model.mean[i, j]
    return float((delta * delta / model.var[i, j]).sum())


def score_grid(grid: FeatureGrid, model: GaussianGrid) -> np.ndarray:
    """Mahalanobis score for every position; returns an (H, W) array."""
    if grid.patches.shape != model.mean.shape:
        raise ValidationError(f"grid shape {grid.patches.shape} does not match model {model.mean.shape}")
    delta = grid.patches.astype(np.float64) - model.mean
    if isinstance(model, DiagGaussianGrid):
        return (delta * delta / model.var).sum(axis=-1)
    if model.precision is None:
        raise ValidationError("model has no precision matrices; refit with compute_precision=True")
    return np.einsum("hwi,hwij,hwj->hw", delta, model.precision, delta)


def save_model(model: GaussianGrid, path: str) -> int:
    if isinstance(model, DiagGaussianGrid):
        kind, eps = KIND_DIAG, model.epsilon
        payload = np.concatenate([model.mean, model.var], axis=-1)
    else:
        if model.precision is None:
            raise ValidationError("cannot serialize a full model without precision matrices")
        kind, eps = KIND_FULL, model.regularizer
        h, w, d = model.mean.shape
        payload = np.concatenate(
            [model.mean, model.cov.reshape(h, w, d * d), model.precision.reshape(h, w, d * d)], axis=-1
        )
    header = _HEADER.pack(MODEL_MAGIC, MODEL_VERSION, kind, model.height, model.width, model.dim, eps)
    body = np.ascontiguousarray(payload, dtype="<f4").tobytes()
    try:
        with open(path, "wb") as f:
            f.write(header)
            f.write(body)
    except OSError as e:
        raise FormatError(f"cannot write model file {path}: {e}") from e
    return len(header) + len(body)


def load_model(path: str) -> GaussianGrid:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise FormatError(f"cannot read model file {path}: {e}") from e
    if len(data) < HEADER_BYTES:
        raise FormatError(f"{path}: shorter than header")
    magic, version, kind, h, w, d, eps = _HEADER.unpack_from(data)
    if magic != MODEL_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != MODEL_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    per_pos = 2 * d if kind == KIND_DIAG else d + 2 * d * d
    expected = HEADER_BYTES + 4 * h * w * per_pos
    if len(data) < expected:
        raise FormatError(f"{path}: truncated payload ({len(data)} bytes, expected {expected})")
    vals = np.frombuffer(data, dtype="<f4", count=h * w * per_pos, offset=HEADER_BYTES)
    vals = vals.reshape(h, w, per_pos).astype(np.float64)
    if kind == KIND_DIAG:
        return DiagGaussianGrid(mean=vals[..., :d].copy(), var=vals[..., d:].copy(), epsilon=float(eps))
    if kind == KIND_FULL:
        mean = vals[..., :d].copy()
        cov = vals[..., d : d + d * d].reshape(h, w, d, d).copy()
        prec = vals[..., d + d * d :].reshape(h, w, d, d).copy()
        return FullGaussianGrid(mean=mean, cov=cov, precision=prec, regularizer=float(eps))
    raise FormatError(f"{path}: unknown model kind {kind}")


def model_value_bytes(kind: int, h: int, w: int, d: int) -> int:
    """Serialized payload size in bytes, excluding the fixed header."""
    per_pos = 2 * d if kind == KIND_DIAG else d + 2 * d * d
    return 4 * h * w * per_pos
