"""Two-stage nearest-neighbor search over a compressed bank: coarse top-k by
lookup-table distances, then exact refinement on the decoded candidates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .pq import Codebooks, CompressedBank, decode_many, encode, _split_query

DEFAULT_CANDIDATES = 1000
MODE_ADC = "adc"
MODE_SDC = "sdc"


@dataclass
class SearchConfig:
    k: int = DEFAULT_CANDIDATES
    mode: str = MODE_ADC

    def validate(self, bank_size: int) -> None:
        if not 1 <= self.k <= bank_size:
            raise ValidationError(f"candidate count k={self.k} out of range [1, {bank_size}]")
        if self.mode not in (MODE_ADC, MODE_SDC):
            raise ValidationError(f"unknown search mode {self.mode!r}")


@dataclass
class OperationCounts:
    coarse_lookups: int   # K*m
    fine_mults: int       # k*d
    exhaustive_mults: int  # K*d


def build_distance_table(x: np.ndarray, codebooks: Codebooks) -> np.ndarray:
    """(m, V) table of squared distances from the query's sub-vectors to every
    centroid; built once per query in O(V*d)."""
    subs = _split_query(x, codebooks)
    diff = codebooks.centroids.astype(np.float64) - subs[:, None, :]
    return (diff * diff).sum(axis=2)


def coarse_search(
    x: np.ndarray, compressed_bank: CompressedBank, config: SearchConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Top-k bank indices by table-summed squared distance, sorted ascending
    (ties: lowest bank index). In sdc mode the query is quantized first."""
    config.validate(compressed_bank.size)
    cb = compressed_bank.codebooks
    if config.mode == MODE_SDC:
        q = encode(x, cb)
        query = cb.centroids[np.arange(cb.m), q].reshape(-1).astype(np.float64)
    else:
        query = x
    table = build_distance_table(query, cb)
    approx = table[np.arange(cb.m)[None, :], compressed_bank.codes].sum(axis=1)
    k = config.k
    if k < compressed_bank.size:
        # partition gives the k-th smallest value; ties at that boundary are
        # resolved toward the lowest bank index explicitly
        thresh = np.partition(approx, k - 1)[k - 1]
        below = np.flatnonzero(approx < thresh)
        equal = np.flatnonzero(approx == thresh)
        part = np.concatenate([below, equal[: k - below.size]])
    else:
        part = np.arange(compressed_bank.size)
    order = part[np.lexsort((part, approx[part]))]
    return order, approx[order]


def fine_search(
    x: np.ndarray, candidates: np.ndarray, compressed_bank: CompressedBank
) -> tuple[float, int]:
    """Exact Euclidean distance to the decoded candidates; returns the minimum
    and its bank index (ties: lowest bank index)."""
    candidates = np.asarray(candidates)
    if candidates.size == 0:
        raise ValidationError("empty candidate list")
    x = np.asarray(x, dtype=np.float64)
    recon = decode_many(compressed_bank.codes[candidates], compressed_bank.codebooks)
    d2 = ((recon - x) ** 2).sum(axis=1)
    best = d2.min()
    idx = int(candidates[d2 == best].min())
    return float(np.sqrt(best)), idx


def score_patch(x: np.ndarray, compressed_bank: CompressedBank, config: SearchConfig) -> float:
    """Coarse top-k then exact refinement; the final anomaly score."""
    candidates, _ = coarse_search(x, compressed_bank, config)
    score, _ = fine_search(x, candidates, compressed_bank)
    return score


def score_grid_pq(patches: np.ndarray, compressed_bank: CompressedBank, config: SearchConfig) -> np.ndarray:
    """score_patch applied over an (H, W, d) grid; returns (H, W) scores."""
    h, w, d = patches.shape
    if d != compressed_bank.dim:
        raise ValidationError(f"grid dim {d} does not match bank dim {compressed_bank.dim}")
    out = np.empty((h, w))
    flat = patches.reshape(-1, d).astype(np.float64)
    for n in range(flat.shape[0]):
        out[n // w, n % w] = score_patch(flat[n], compressed_bank, config)
    return out


def recall_at_k(queries: np.ndarray, compressed_bank: CompressedBank, config: SearchConfig) -> float:
    """Fraction of queries whose true decoded-space nearest neighbor appears
    among the coarse candidates. Always 1.0 at k = K."""
    queries = np.asarray(queries, dtype=np.float64)
    recon = decode_many(compressed_bank.codes, compressed_bank.codebooks)
    hits = 0
    for x in queries:
        d2 = ((recon - x) ** 2).sum(axis=1)
        true_nn = int(np.argmin(d2))
        candidates, _ = coarse_search(x, compressed_bank, config)
        hits += int(true_nn in candidates)
    return hits / len(queries)


def count_operations(compressed_bank: CompressedBank, config: SearchConfig) -> OperationCounts:
    """Distance-computation counts for the benchmark report."""
    k_bank = compressed_bank.size
    d = compressed_bank.dim
    m = compressed_bank.codebooks.m
    return OperationCounts(
        coarse_lookups=k_bank * m,
        fine_mults=config.k * d,
        exhaustive_mults=k_bank * d,
    )
