"""AUROC metrics (image- and pixel-level), footprint accounting, and timing
benchmarks.
"""

from __future__ import annotations

import os
import struct
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from . import bank as bank_mod
from . import features as feat_mod
from . import gaussian as gauss_mod
from . import pq as pq_mod
from .errors import FormatError, ValidationError

LABEL_ANOMALOUS = "anomalous"
LABEL_NORMAL = "normal"


def auroc(scores: Sequence[float], labels: Sequence[str]) -> float:
    """Mann-Whitney rank AUROC; ties count 1/2. Anomalous is the positive
    class (higher score = more anomalous)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValidationError("scores and labels length mismatch")
    pos = labels == LABEL_ANOMALOUS
    n_pos = int(pos.sum())
    n_neg = int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("AUROC needs both classes present")
    ranks = rankdata(scores)  # average rank on ties = half credit
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def pixel_auroc(pixel_maps: Sequence[np.ndarray], masks: Sequence[np.ndarray]) -> float:
    """AUROC over the pooled per-pixel scores of all test images."""
    if len(pixel_maps) != len(masks):
        raise ValidationError("pixel map / mask count mismatch")
    scores = []
    labels = []
    for pm, mk in zip(pixel_maps, masks):
        pm = np.asarray(pm, dtype=np.float64)
        mk = np.asarray(mk).astype(bool)
        if pm.shape != mk.shape:
            raise ValidationError(f"map shape {pm.shape} does not match mask {mk.shape}")
        scores.append(pm.reshape(-1))
        labels.append(mk.reshape(-1))
    scores = np.concatenate(scores)
    labels = np.concatenate(labels)
    if not labels.any():
        raise ValidationError("no positive pixel in any mask")
    str_labels = np.where(labels, LABEL_ANOMALOUS, LABEL_NORMAL)
    return auroc(scores, str_labels)


@dataclass
class ArtifactFootprint:
    path: str
    actual_bytes: int
    analytic_value_bytes: int
    header_overhead_bytes: int
    extra_bytes: int  # anything beyond header + analytic values (e.g. provenance)


@dataclass
class BenchReport:
    method: str
    model_bytes: int = 0
    footprints: list = field(default_factory=list)
    mean_ms: float = 0.0
    median_ms: float = 0.0
    repetitions: int = 0
    images: int = 0
    coarse_lookups: Optional[int] = None
    fine_mults: Optional[int] = None
    exhaustive_mults: Optional[int] = None
    per_patch_mults: Optional[int] = None
    peak_transient_bytes: Optional[int] = None  # analytic estimate

    def to_kv(self) -> str:
        lines = [f"method\t{self.method}"]
        for name in (
            "model_bytes", "mean_ms", "median_ms", "repetitions", "images",
            "coarse_lookups", "fine_mults", "exhaustive_mults",
            "per_patch_mults", "peak_transient_bytes",
        ):
            val = getattr(self, name)
            if val is not None:
                lines.append(f"{name}\t{val}")
        for fp in self.footprints:
            lines.append(
                f"artifact\t{fp.path}\tactual={fp.actual_bytes}"
                f"\tanalytic={fp.analytic_value_bytes}"
                f"\theader={fp.header_overhead_bytes}\textra={fp.extra_bytes}"
            )
        return "\n".join(lines) + "\n"


def _artifact_footprint(path: str) -> ArtifactFootprint:
    """Analytic vs actual byte accounting for one serialized artifact."""
    with open(path, "rb") as f:
        head = f.read(4)
    actual = os.path.getsize(path)
    if head == feat_mod.FEATURE_MAGIC:
        with open(path, "rb") as f:
            _, _, h, w, d = struct.unpack("<4sIIII", f.read(feat_mod.HEADER_BYTES))
        value_bytes = 4 * h * w * d
        header = feat_mod.HEADER_BYTES
    elif head == gauss_mod.MODEL_MAGIC:
        with open(path, "rb") as f:
            _, _, kind, h, w, d, _ = struct.unpack("<4sIBIIIf", f.read(gauss_mod.HEADER_BYTES))
        value_bytes = gauss_mod.model_value_bytes(kind, h, w, d)
        header = gauss_mod.HEADER_BYTES
    elif head == bank_mod.BANK_MAGIC:
        with open(path, "rb") as f:
            _, _, k, d = struct.unpack("<4sIII", f.read(bank_mod.HEADER_BYTES))
        value_bytes = bank_mod.bank_value_bytes(k, d)
        header = bank_mod.HEADER_BYTES
    elif head == pq_mod.PQ_MAGIC:
        with open(path, "rb") as f:
            _, _, k, d, m, b = struct.unpack("<4sIIIII", f.read(pq_mod.HEADER_BYTES))
        rep = pq_mod.storage_report_params(k, d, m, b)
        value_bytes = rep.codebook_bytes + rep.packed_index_bytes
        header = pq_mod.HEADER_BYTES
    else:
        raise FormatError(f"{path}: unknown artifact magic {head!r}")
    return ArtifactFootprint(
        path=path,
        actual_bytes=actual,
        analytic_value_bytes=value_bytes,
        header_overhead_bytes=header,
        extra_bytes=actual - header - value_bytes,
    )


def footprint(artifact_paths: Sequence[str]) -> list[ArtifactFootprint]:
    """Exact on-disk sizes next to the analytic formulas' predictions."""
    out = []
    for path in artifact_paths:
        if not os.path.exists(path):
            raise FormatError(f"missing artifact: {path}")
        out.append(_artifact_footprint(path))
    return out


def bench(
    method: str,
    score_image: Callable[[np.ndarray], np.ndarray],
    test_patches: Sequence[np.ndarray],
    repetitions: int = 3,
) -> BenchReport:
    """Per-image scoring wall time, median and mean over repetitions.

    score_image maps an (H, W, d) patch grid to an (H, W) score grid; timing
    runs single-threaded over images to match per-image latency semantics.
    """
    if not test_patches:
        raise ValidationError("empty test set")
    if repetitions < 1:
        raise ValidationError("repetitions must be >= 1")
    per_image_ms = []
    reference = None
    for rep in range(repetitions):
        outputs = []
        for patches in test_patches:
            t0 = time.perf_counter()
            outputs.append(score_image(patches))
            per_image_ms.append((time.perf_counter() - t0) * 1e3)
        if reference is None:
            reference = outputs
        else:
            for a, b in zip(reference, outputs):
                if not np.array_equal(a, b):
                    raise ValidationError("non-deterministic scoring across repetitions")
    arr = np.asarray(per_image_ms)
    return BenchReport(
        method=method,
        mean_ms=float(arr.mean()),
        median_ms=float(np.median(arr)),
        repetitions=repetitions,
        images=len(test_patches),
    )
