"""Product quantization of the memory bank: per-subspace k-means codebooks,
encode/decode, and byte-exact storage accounting.

Compressed bank files ("VADQ") are little-endian binary: magic, version u32,
K u32, d u32, m u32, b u32, then 4*V*d codebook bytes (subspace-major), then
K code rows of ceil(m*b/8) bytes (indices bit-packed little-endian within a
row).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .bank import MemoryBank
from .errors import FormatError, ValidationError

PQ_MAGIC = b"VADQ"
PQ_VERSION = 1
_HEADER = struct.Struct("<4sIIIII")
HEADER_BYTES = _HEADER.size

MAX_BITS = 16
DEFAULT_SUBSPACES = 8
DEFAULT_BITS = 8
DEFAULT_MAX_ITERS = 100


@dataclass
class Codebooks:
    centroids: np.ndarray  # (m, V, sub_dim) float32

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=np.float32)
        if self.centroids.ndim != 3:
            raise ValidationError(f"centroids must be (m, V, sub_dim), got {self.centroids.shape}")
        if not np.isfinite(self.centroids).all():
            raise ValidationError("non-finite centroids")

    @property
    def m(self) -> int:
        return self.centroids.shape[0]

    @property
    def num_centroids(self) -> int:
        return self.centroids.shape[1]

    @property
    def sub_dim(self) -> int:
        return self.centroids.shape[2]

    @property
    def dim(self) -> int:
        return self.m * self.sub_dim


@dataclass
class CompressedBank:
    codebooks: Codebooks
    codes: np.ndarray  # (K, m) uint16
    bits: int

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=np.uint16)
        if self.codes.ndim != 2 or self.codes.shape[1] != self.codebooks.m:
            raise ValidationError(f"codes must be (K, {self.codebooks.m}), got {self.codes.shape}")
        if self.codes.size and int(self.codes.max()) >= self.codebooks.num_centroids:
            raise ValidationError("code index out of codebook range")

    @property
    def size(self) -> int:
        return self.codes.shape[0]

    @property
    def dim(self) -> int:
        return self.codebooks.dim


@dataclass
class StorageReport:
    index_bytes: int          # (m*b*K)/8, rounded up to a whole byte
    codebook_bytes: int       # 4*V*d
    total_bytes: int          # index + codebook
    raw_bytes: int            # 4*K*d
    ratio: float              # raw / total
    packed_index_bytes: int   # ceil(m*b/8)*K as actually serialized
    header_bytes: int = HEADER_BYTES


def _check_params(d: int, m: int, b: int) -> None:
    if m < 1 or d % m != 0:
        raise ValidationError(f"m={m} must be >= 1 and divide d={d}")
    if b < 1 or b > MAX_BITS:
        raise ValidationError(f"b={b} must be in [1, {MAX_BITS}]")


def kmeans(points: np.ndarray, v: int, rng: np.random.Generator, max_iters: int) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Deterministic Lloyd k-means with k-means++ init.

    Ties in assignment go to the lowest centroid index. An empty cluster is
    re-seeded with the point farthest from its assigned centroid. Returns
    (centroids, assignments, per-iteration WCSS history).
    """
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]

    # k-means++ seeding; duplicate points collapse onto already-chosen centers
    centers = np.empty((v, pts.shape[1]))
    centers[0] = pts[int(rng.integers(n))]
    min_d2 = ((pts - centers[0]) ** 2).sum(axis=1)
    for c in range(1, v):
        total = min_d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=min_d2 / total))
        centers[c] = pts[idx]
        np.minimum(min_d2, ((pts - centers[c]) ** 2).sum(axis=1), out=min_d2)

    assign = np.full(n, -1, dtype=np.int64)
    history: list[float] = []
    for _ in range(max_iters):
        d2 = cdist(pts, centers, metric="sqeuclidean")
        new_assign = np.argmin(d2, axis=1)
        point_d2 = d2[np.arange(n), new_assign]
        history.append(float(point_d2.sum()))
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(v):
            mask = assign == c
            if mask.any():
                centers[c] = pts[mask].mean(axis=0)
            else:
                far = int(np.argmax(point_d2))
                centers[c] = pts[far]
                assign[far] = c
                point_d2[far] = 0.0
    return centers, assign, history


def train_codebooks(
    bank: MemoryBank,
    m: int = DEFAULT_SUBSPACES,
    b: int = DEFAULT_BITS,
    seed: int = 0,
    max_iters: int = DEFAULT_MAX_ITERS,
) -> Codebooks:
    """Independent k-means per subspace over the bank's sub-vectors."""
    _check_params(bank.dim, m, b)
    v = 1 << b
    sub_dim = bank.dim // m
    subs = bank.vectors.astype(np.float64).reshape(bank.size, m, sub_dim)
    centroids = np.empty((m, v, sub_dim), dtype=np.float32)
    for j in range(m):
        rng = np.random.default_rng([seed, j])
        centers, _, _ = kmeans(subs[:, j, :], v, rng, max_iters)
        centroids[j] = centers.astype(np.float32)
    return Codebooks(centroids=centroids)


def _split_query(x: np.ndarray, codebooks: Codebooks) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (codebooks.dim,):
        raise ValidationError(f"query shape {x.shape} does not match quantizer dim {codebooks.dim}")
    return x.reshape(codebooks.m, codebooks.sub_dim)


def encode(x: np.ndarray, codebooks: Codebooks) -> np.ndarray:
    """Per-subspace nearest centroid (ties: lowest index); returns m indices."""
    subs = _split_query(x, codebooks)
    d2 = ((codebooks.centroids.astype(np.float64) - subs[:, None, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1).astype(np.uint16)


def encode_many(vectors: np.ndarray, codebooks: Codebooks) -> np.ndarray:
    """Vectorized encode over rows of an (n, d) array."""
    vecs = np.asarray(vectors, dtype=np.float64)
    n = vecs.shape[0]
    subs = vecs.reshape(n, codebooks.m, codebooks.sub_dim)
    cents = codebooks.centroids.astype(np.float64)
    codes = np.empty((n, codebooks.m), dtype=np.uint16)
    for j in range(codebooks.m):
        d2 = cdist(subs[:, j, :], cents[j], metric="sqeuclidean")
        codes[:, j] = np.argmin(d2, axis=1)
    return codes


def decode(code: np.ndarray, codebooks: Codebooks) -> np.ndarray:
    """Concatenate the indexed centroids back into a d-vector."""
    code = np.asarray(code)
    if code.shape != (codebooks.m,):
        raise ValidationError(f"code length {code.shape} does not match m={codebooks.m}")
    if code.min() < 0 or code.max() >= codebooks.num_centroids:
        raise ValidationError("code index out of range")
    return codebooks.centroids[np.arange(codebooks.m), code].reshape(-1).astype(np.float64)


def decode_many(codes: np.ndarray, codebooks: Codebooks) -> np.ndarray:
    """Reconstruct an (n, d) array of approximations from (n, m) codes."""
    codes = np.asarray(codes)
    out = codebooks.centroids[np.arange(codebooks.m)[None, :], codes]
    return out.reshape(codes.shape[0], codebooks.dim).astype(np.float64)


def compress_bank(
    bank: MemoryBank,
    m: int = DEFAULT_SUBSPACES,
    b: int = DEFAULT_BITS,
    seed: int = 0,
    max_iters: int = DEFAULT_MAX_ITERS,
) -> CompressedBank:
    """Train codebooks on the bank itself, then encode every vector."""
    codebooks = train_codebooks(bank, m=m, b=b, seed=seed, max_iters=max_iters)
    codes = encode_many(bank.vectors, codebooks)
    return CompressedBank(codebooks=codebooks, codes=codes, bits=b)


def storage_report_params(k: int, d: int, m: int, b: int) -> StorageReport:
    """Storage accounting from the (K, d, m, b) parameters alone."""
    v = 1 << b
    index_bytes = -((m * b * k) // -8)  # ceil
    codebook_bytes = 4 * v * d
    raw_bytes = 4 * k * d
    total = index_bytes + codebook_bytes
    return StorageReport(
        index_bytes=index_bytes,
        codebook_bytes=codebook_bytes,
        total_bytes=total,
        raw_bytes=raw_bytes,
        ratio=raw_bytes / total,
        packed_index_bytes=_row_bytes(m, b) * k,
    )


def storage_report(cb: CompressedBank) -> StorageReport:
    return storage_report_params(cb.size, cb.dim, cb.codebooks.m, cb.bits)


def _row_bytes(m: int, b: int) -> int:
    return -((m * b) // -8)


def _pack_codes(codes: np.ndarray, b: int) -> bytes:
    k, m = codes.shape
    row_bytes = _row_bytes(m, b)
    if b == 8:
        return codes.astype("<u1").tobytes()
    if b == 16:
        return codes.astype("<u2").tobytes()
    out = bytearray(k * row_bytes)
    for r in range(k):
        acc = 0
        for j in range(m):
            acc |= int(codes[r, j]) << (j * b)
        out[r * row_bytes : (r + 1) * row_bytes] = acc.to_bytes(row_bytes, "little")
    return bytes(out)


def _unpack_codes(raw: bytes, k: int, m: int, b: int) -> np.ndarray:
    row_bytes = _row_bytes(m, b)
    if b == 8:
        return np.frombuffer(raw, dtype="<u1").reshape(k, m).astype(np.uint16)
    if b == 16:
        return np.frombuffer(raw, dtype="<u2").reshape(k, m).astype(np.uint16)
    mask = (1 << b) - 1
    codes = np.empty((k, m), dtype=np.uint16)
    for r in range(k):
        acc = int.from_bytes(raw[r * row_bytes : (r + 1) * row_bytes], "little")
        for j in range(m):
            codes[r, j] = (acc >> (j * b)) & mask
    return codes


def save_compressed_bank(cb: CompressedBank, path: str) -> int:
    header = _HEADER.pack(PQ_MAGIC, PQ_VERSION, cb.size, cb.dim, cb.codebooks.m, cb.bits)
    cents = np.ascontiguousarray(cb.codebooks.centroids, dtype="<f4").tobytes()
    rows = _pack_codes(cb.codes, cb.bits)
    try:
        with open(path, "wb") as f:
            f.write(header)
            f.write(cents)
            f.write(rows)
    except OSError as e:
        raise FormatError(f"cannot write compressed bank {path}: {e}") from e
    return len(header) + len(cents) + len(rows)


def load_compressed_bank(path: str) -> CompressedBank:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise FormatError(f"cannot read compressed bank {path}: {e}") from e
    if len(data) < HEADER_BYTES:
        raise FormatError(f"{path}: shorter than header")
    magic, version, k, d, m, b = _HEADER.unpack_from(data)
    if magic != PQ_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != PQ_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    _check_params(d, m, b)
    v = 1 << b
    cents_bytes = 4 * v * d
    rows_bytes = _row_bytes(m, b) * k
    if len(data) < HEADER_BYTES + cents_bytes + rows_bytes:
        raise FormatError(f"{path}: truncated payload")
    cents = np.frombuffer(data, dtype="<f4", count=v * d, offset=HEADER_BYTES)
    centroids = cents.reshape(m, v, d // m).copy()
    raw = data[HEADER_BYTES + cents_bytes : HEADER_BYTES + cents_bytes + rows_bytes]
    codes = _unpack_codes(raw, k, m, b)
    return CompressedBank(codebooks=Codebooks(centroids=centroids), codes=codes, bits=b)
