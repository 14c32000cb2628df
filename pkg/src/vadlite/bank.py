"""Memory bank of normal patch descriptors: collection, greedy k-center
coreset selection, and the exhaustive nearest-neighbor baseline.

Bank files ("VADB") are little-endian binary: magic, version u32, K u32,
d u32, K*d float32 values, then a provenance table of K entries
(u32 image-id length, utf-8 image id, row u32, col u32).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import FormatError, ValidationError
from .features import FeatureGrid

BANK_MAGIC = b"VADB"
BANK_VERSION = 1
_HEADER = struct.Struct("<4sIII")
HEADER_BYTES = _HEADER.size

DEFAULT_CORESET_SIZE = 10_000


@dataclass
class MemoryBank:
    vectors: np.ndarray  # (K, d) float32
    provenance: list[tuple[str, tuple[int, int]]]

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float32)
        if self.vectors.ndim != 2 or self.vectors.shape[0] < 1:
            raise ValidationError(f"bank vectors must be a non-empty (K, d) array, got {self.vectors.shape}")
        if len(self.provenance) != self.vectors.shape[0]:
            raise ValidationError("provenance length does not match vector count")
        if not np.isfinite(self.vectors).all():
            raise ValidationError("non-finite bank vectors")

    @property
    def size(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass
class CoresetConfig:
    target_size: Optional[int] = None
    target_fraction: Optional[float] = None
    seed: int = 0
    projection_dim: Optional[int] = None

    def resolve_size(self, bank_size: int) -> int:
        if (self.target_size is None) == (self.target_fraction is None):
            raise ValidationError("exactly one of target_size / target_fraction must be set")
        if self.target_size is not None:
            size = self.target_size
        else:
            size = max(1, int(round(self.target_fraction * bank_size)))
        if not 1 <= size <= bank_size:
            raise ValidationError(f"coreset size {size} out of range [1, {bank_size}]")
        return size


def collect_patches(train_grids: list[FeatureGrid], image_ids: Optional[list[str]] = None) -> MemoryBank:
    """Flatten all patch descriptors (row-major per image) into one bank."""
    if not train_grids:
        raise ValidationError("collect_patches: empty grid list")
    d = train_grids[0].dim
    if image_ids is None:
        image_ids = [f"image{n}" for n in range(len(train_grids))]
    vectors = []
    provenance = []
    for img_id, g in zip(image_ids, train_grids):
        if g.dim != d:
            raise ValidationError(f"grid dim mismatch: {g.dim} vs {d}")
        vectors.append(g.patches.reshape(-1, d))
        for i in range(g.height):
            for j in range(g.width):
                provenance.append((img_id, (i, j)))
    return MemoryBank(vectors=np.concatenate(vectors, axis=0), provenance=provenance)


def coreset_select(bank: MemoryBank, config: CoresetConfig) -> MemoryBank:
    """Greedy k-center (farthest-point) subset of the bank.

    The seed picks the first element uniformly; every later pick maximizes
    distance to the already-selected set (ties: lowest index). Vectors are
    kept verbatim, never averaged. The optional random projection is used
    only inside distance evaluation.
    """
    k = config.resolve_size(bank.size)
    rng = np.random.default_rng(config.seed)
    pts = bank.vectors.astype(np.float64)
    if config.projection_dim is not None:
        if config.projection_dim < 1:
            raise ValidationError(f"projection_dim must be >= 1, got {config.projection_dim}")
        proj = rng.standard_normal((bank.dim, config.projection_dim)) / np.sqrt(config.projection_dim)
        pts = pts @ proj

    first = int(rng.integers(bank.size))
    selected = [first]
    min_d2 = ((pts - pts[first]) ** 2).sum(axis=1)
    for _ in range(k - 1):
        nxt = int(np.argmax(min_d2))  # argmax takes the lowest index on ties
        selected.append(nxt)
        np.minimum(min_d2, ((pts - pts[nxt]) ** 2).sum(axis=1), out=min_d2)
    return MemoryBank(
        vectors=bank.vectors[selected].copy(),
        provenance=[bank.provenance[i] for i in selected],
    )


def exhaustive_nn_score(x: np.ndarray, bank: MemoryBank) -> tuple[float, int]:
    """Minimum Euclidean distance over the whole bank and the argmin index."""
    if bank.size < 1:
        raise ValidationError("empty bank")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (bank.dim,):
        raise ValidationError(f"query shape {x.shape} does not match bank dim {bank.dim}")
    d2 = ((bank.vectors.astype(np.float64) - x) ** 2).sum(axis=1)
    idx = int(np.argmin(d2))  # lowest index on ties
    return float(np.sqrt(d2[idx])), idx


def bank_value_bytes(k: int, d: int) -> int:
    """Raw vector payload size: 4*K*d bytes of float32."""
    return 4 * k * d


def save_bank(bank: MemoryBank, path: str) -> int:
    header = _HEADER.pack(BANK_MAGIC, BANK_VERSION, bank.size, bank.dim)
    body = np.ascontiguousarray(bank.vectors, dtype="<f4").tobytes()
    prov = bytearray()
    for img_id, (i, j) in bank.provenance:
        raw = img_id.encode("utf-8")
        prov += struct.pack("<I", len(raw)) + raw + struct.pack("<II", i, j)
    try:
        with open(path, "wb") as f:
            f.write(header)
            f.write(body)
            f.write(bytes(prov))
    except OSError as e:
        raise FormatError(f"cannot write bank file {path}: {e}") from e
    return len(header) + len(body) + len(prov)


def load_bank(path: str) -> MemoryBank:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise FormatError(f"cannot read bank file {path}: {e}") from e
    if len(data) < HEADER_BYTES:
        raise FormatError(f"{path}: shorter than header")
    magic, version, k, d = _HEADER.unpack_from(data)
    if magic != BANK_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != BANK_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    body_end = HEADER_BYTES + 4 * k * d
    if len(data) < body_end:
        raise FormatError(f"{path}: truncated vector payload")
    vectors = np.frombuffer(data, dtype="<f4", count=k * d, offset=HEADER_BYTES).reshape(k, d).copy()
    provenance = []
    off = body_end
    try:
        for _ in range(k):
            (ln,) = struct.unpack_from("<I", data, off)
            off += 4
            img_id = data[off : off + ln].decode("utf-8")
            off += ln
            i, j = struct.unpack_from("<II", data, off)
            off += 8
            provenance.append((img_id, (i, j)))
    except (struct.error, UnicodeDecodeError) as e:
        raise FormatError(f"{path}: corrupt provenance table: {e}") from e
    return MemoryBank(vectors=vectors, provenance=provenance)
