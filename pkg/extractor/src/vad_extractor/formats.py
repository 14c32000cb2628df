"""Writers for the portable feature-file and manifest formats.

Feature files ("VADF") are little-endian binary: a 20-byte header
(magic "VADF", version u32, height u32, width u32, depth u32) followed by
4*H*W*d float32 payload bytes in row-major order.

Dataset manifests are tab-separated UTF-8 text. The first line is
"VADM-MANIFEST 1 <split>"; each record line carries
image_id, feature_path, label ("normal"/"anomalous"), mask_path ("-" if
absent), image height, image width.

Everything here is written atomically (temp file + rename) so a crashed run
never leaves a half-written artifact behind.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ExtractError

FEATURE_MAGIC = b"VADF"
FEATURE_VERSION = 1
_HEADER = struct.Struct("<4sIIII")
HEADER_BYTES = _HEADER.size  # 20

MANIFEST_MAGIC = "VADM-MANIFEST"
MANIFEST_VERSION = 1


@dataclass
class ExportRecord:
    image_id: str
    feature_path: str
    label: str
    mask_path: Optional[str]
    height: int
    width: int


def atomic_write_bytes(path: str, data: bytes) -> None:
    tmp = path + ".tmp"
    try:
        with open(tmp, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except OSError as e:
        raise ExtractError(f"cannot write {path}: {e}") from e


def write_feature_file(grid: np.ndarray, path: str) -> int:
    """Serialize an (H, W, d) float grid; returns bytes written."""
    grid = np.asarray(grid, dtype=np.float32)
    if grid.ndim != 3 or min(grid.shape) < 1:
        raise ExtractError(f"feature grid must be non-empty (H, W, d), got shape {grid.shape}")
    if not np.isfinite(grid).all():
        raise ExtractError("non-finite values in feature grid")
    h, w, d = grid.shape
    header = _HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, h, w, d)
    payload = np.ascontiguousarray(grid, dtype="<f4").tobytes()
    atomic_write_bytes(path, header + payload)
    return len(header) + len(payload)


def read_feature_header(path: str) -> tuple[int, int, int]:
    """Return (height, width, depth) from a feature file header."""
    with open(path, "rb") as f:
        head = f.read(HEADER_BYTES)
    if len(head) < HEADER_BYTES:
        raise ExtractError(f"{path}: shorter than the {HEADER_BYTES}-byte header")
    magic, version, h, w, d = _HEADER.unpack(head)
    if magic != FEATURE_MAGIC:
        raise ExtractError(f"{path}: bad magic {magic!r}")
    if version != FEATURE_VERSION:
        raise ExtractError(f"{path}: unsupported version {version}")
    return h, w, d


def write_manifest(split: str, records: list[ExportRecord], path: str) -> None:
    if split not in ("train", "test"):
        raise ExtractError(f"unknown split {split!r}")
    lines = [f"{MANIFEST_MAGIC} {MANIFEST_VERSION} {split}"]
    for r in records:
        mask = r.mask_path if r.mask_path else "-"
        lines.append("\t".join([r.image_id, r.feature_path, r.label, mask, str(r.height), str(r.width)]))
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))
