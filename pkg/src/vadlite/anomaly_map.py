"""Patch scores to pixel-level anomaly maps and image-level scores."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ValidationError

DEFAULT_SIGMA = 4.0


@dataclass
class ScoreMap:
    patch_scores: np.ndarray  # (H*, W*)
    image_score: float
    pixel_map: Optional[np.ndarray] = None  # (orig_H, orig_W)


def image_score(patch_scores: np.ndarray) -> float:
    """Maximum patch score; taken on raw patch scores, before upsampling."""
    patch_scores = np.asarray(patch_scores)
    if patch_scores.size == 0:
        raise ValidationError("empty score grid")
    return float(patch_scores.max())


def upsample_scores(patch_scores: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Bilinear interpolation to (target_h, target_w), half-pixel centers."""
    src = np.asarray(patch_scores, dtype=np.float64)
    if src.ndim != 2 or src.size == 0:
        raise ValidationError(f"patch scores must be a non-empty 2-d grid, got shape {src.shape}")
    if target_h < 1 or target_w < 1:
        raise ValidationError("zero target size")
    h, w = src.shape
    if target_h < h or target_w < w:
        raise ValidationError(f"target {target_h}x{target_w} smaller than patch grid {h}x{w}")

    ys = np.clip((np.arange(target_h) + 0.5) * h / target_h - 0.5, 0, h - 1)
    xs = np.clip((np.arange(target_w) + 0.5) * w / target_w - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    return (
        src[y0[:, None], x0[None, :]] * (1 - wy) * (1 - wx)
        + src[y0[:, None], x1[None, :]] * (1 - wy) * wx
        + src[y1[:, None], x0[None, :]] * wy * (1 - wx)
        + src[y1[:, None], x1[None, :]] * wy * wx
    )


def smooth(pixel_map: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian blur with reflective borders; sigma = 0 is the identity."""
    if sigma < 0:
        raise ValidationError(f"sigma must be >= 0, got {sigma}")
    pixel_map = np.asarray(pixel_map, dtype=np.float64)
    if sigma == 0:
        return pixel_map.copy()
    return gaussian_filter(pixel_map, sigma=sigma, mode="reflect")


def minmax_normalize(scores: np.ndarray) -> np.ndarray:
    """(s - min) / (max - min); all-equal input maps to zeros with a warning."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValidationError("no scores to normalize")
    lo, hi = scores.min(), scores.max()
    if hi == lo:
        warnings.warn("all scores equal; min-max normalization returns zeros")
        return np.zeros_like(scores)
    return (scores - lo) / (hi - lo)


def build_score_map(
    patch_scores: np.ndarray,
    target_h: Optional[int] = None,
    target_w: Optional[int] = None,
    sigma: float = DEFAULT_SIGMA,
) -> ScoreMap:
    """Bundle patch scores with the image score and an optional pixel map."""
    patch_scores = np.asarray(patch_scores, dtype=np.float64)
    score = image_score(patch_scores)
    pixel = None
    if target_h is not None and target_w is not None:
        pixel = smooth(upsample_scores(patch_scores, target_h, target_w), sigma)
    return ScoreMap(patch_scores=patch_scores, image_score=score, pixel_map=pixel)


def write_pgm(grid: np.ndarray, path: str) -> None:
    """Export a normalized map as 16-bit binary PGM (big-endian samples)."""
    norm = minmax_normalize(grid) if grid.max() > grid.min() else np.zeros_like(grid, dtype=np.float64)
    pixels = np.round(norm * 65535).astype(">u2")
    h, w = pixels.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        f.write(pixels.tobytes())
