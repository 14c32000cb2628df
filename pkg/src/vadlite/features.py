"""Portable on-disk feature representation and multi-scale concatenation.

Feature files ("VADF") are little-endian binary: a 20-byte header
(magic "VADF", version u32, height u32, width u32, depth u32) followed by
4*H*W*d float32 payload bytes in row-major order.

Dataset manifests are tab-separated UTF-8 text with the header line
"VADM-MANIFEST 1 <split>".
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .errors import FormatError, ValidationError

FEATURE_MAGIC = b"VADF"
FEATURE_VERSION = 1
_HEADER = struct.Struct("<4sIIII")
HEADER_BYTES = _HEADER.size  # 20

MANIFEST_MAGIC = "VADM-MANIFEST"
MANIFEST_VERSION = 1


@dataclass
class LayerMap:
    """One backbone layer's activation grid, shape (height, width, depth)."""

    layer_id: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 3:
            raise ValidationError(
                f"layer {self.layer_id}: expected 3-d (H, W, depth) values, got shape {self.values.shape}"
            )
        if min(self.values.shape) < 1:
            raise ValidationError(f"layer {self.layer_id}: empty dimension in {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise ValidationError(f"layer {self.layer_id}: non-finite values")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def depth(self) -> int:
        return self.values.shape[2]


@dataclass
class FeatureGrid:
    """Grid of patch descriptors, shape (height, width, dim)."""

    patches: np.ndarray

    def __post_init__(self):
        self.patches = np.asarray(self.patches, dtype=np.float32)
        if self.patches.ndim != 3:
            raise ValidationError(f"expected 3-d (H, W, dim) patches, got shape {self.patches.shape}")
        if min(self.patches.shape) < 1:
            raise ValidationError(f"empty dimension in {self.patches.shape}")
        if not np.isfinite(self.patches).all():
            raise ValidationError("non-finite descriptor values")

    @property
    def height(self) -> int:
        return self.patches.shape[0]

    @property
    def width(self) -> int:
        return self.patches.shape[1]

    @property
    def dim(self) -> int:
        return self.patches.shape[2]


@dataclass
class ImageRecord:
    image_id: str
    feature_path: str
    label: str  # "normal" | "anomalous"
    mask_path: Optional[str]
    height: int
    width: int


@dataclass
class DatasetManifest:
    split: str  # "train" | "test"
    records: list[ImageRecord]
    root: str = "."

    def resolve(self, relpath: str) -> str:
        return os.path.join(self.root, relpath)

    def load_grid(self, record: ImageRecord) -> FeatureGrid:
        path = self.resolve(record.feature_path)
        if not os.path.exists(path):
            raise FormatError(f"feature file missing: {path}")
        return read_feature_file(path)

    def iter_grids(self) -> Iterator[tuple[ImageRecord, FeatureGrid]]:
        for rec in self.records:
            yield rec, self.load_grid(rec)


def concat_multiscale(layers: list[LayerMap]) -> FeatureGrid:
    """Upsample every layer to the first layer's resolution (nearest-neighbor
    replication) and concatenate along the channel dimension."""
    if not layers:
        raise ValidationError("concat_multiscale: empty layer list")
    h, w = layers[0].height, layers[0].width
    parts = []
    for lm in layers:
        if lm.height > h or lm.width > w:
            raise ValidationError(
                f"layer {lm.layer_id} is {lm.height}x{lm.width}, larger than the first layer's {h}x{w}"
            )
        rows = (np.arange(h) * lm.height) // h
        cols = (np.arange(w) * lm.width) // w
        parts.append(lm.values[rows[:, None], cols[None, :], :])
    return FeatureGrid(np.concatenate(parts, axis=2))


def write_feature_file(grid: FeatureGrid, path: str) -> int:
    """Write a VADF file; returns the number of bytes written."""
    payload = np.ascontiguousarray(grid.patches, dtype="<f4").tobytes()
    header = _HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, grid.height, grid.width, grid.dim)
    try:
        with open(path, "wb") as f:
            f.write(header)
            f.write(payload)
    except OSError as e:
        raise FormatError(f"cannot write feature file {path}: {e}") from e
    return len(header) + len(payload)


def read_feature_file(path: str) -> FeatureGrid:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise FormatError(f"cannot read feature file {path}: {e}") from e
    if len(data) < HEADER_BYTES:
        raise FormatError(f"{path}: file shorter than the {HEADER_BYTES}-byte header")
    magic, version, h, w, d = _HEADER.unpack_from(data)
    if magic != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FEATURE_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    expected = HEADER_BYTES + 4 * h * w * d
    if len(data) < expected:
        raise FormatError(f"{path}: truncated payload ({len(data)} bytes, expected {expected})")
    values = np.frombuffer(data, dtype="<f4", count=h * w * d, offset=HEADER_BYTES)
    if not np.isfinite(values).all():
        raise FormatError(f"{path}: non-finite values in payload")
    return FeatureGrid(values.reshape(h, w, d).copy())


def write_manifest(manifest: DatasetManifest, path: str) -> None:
    lines = [f"{MANIFEST_MAGIC} {MANIFEST_VERSION} {manifest.split}"]
    for r in manifest.records:
        mask = r.mask_path if r.mask_path else "-"
        lines.append("\t".join([r.image_id, r.feature_path, r.label, mask, str(r.height), str(r.width)]))
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def load_dataset(manifest_path: str) -> DatasetManifest:
    """Parse and validate a manifest; feature files are opened lazily."""
    try:
        with open(manifest_path, "r", encoding="utf-8") as f:
            lines = [ln.rstrip("\n") for ln in f if ln.strip()]
    except OSError as e:
        raise FormatError(f"cannot read manifest {manifest_path}: {e}") from e
    if not lines:
        raise FormatError(f"{manifest_path}: empty manifest")
    head = lines[0].split()
    if len(head) != 3 or head[0] != MANIFEST_MAGIC:
        raise FormatError(f"{manifest_path}: bad manifest header line {lines[0]!r}")
    if head[1] != str(MANIFEST_VERSION):
        raise FormatError(f"{manifest_path}: unsupported manifest version {head[1]}")
    split = head[2]
    if split not in ("train", "test"):
        raise ValidationError(f"{manifest_path}: unknown split {split!r}")

    records = []
    for ln in lines[1:]:
        parts = ln.split("\t")
        if len(parts) != 6:
            raise FormatError(f"{manifest_path}: malformed record line {ln!r}")
        image_id, feat, label, mask, h, w = parts
        if label not in ("normal", "anomalous"):
            raise ValidationError(f"{manifest_path}: unknown label {label!r} for {image_id}")
        records.append(
            ImageRecord(
                image_id=image_id,
                feature_path=feat,
                label=label,
                mask_path=None if mask == "-" else mask,
                height=int(h),
                width=int(w),
            )
        )

    for r in records:
        if split == "train" and r.label != "normal":
            raise ValidationError(f"train split contains non-normal record {r.image_id}")
        if split == "test" and r.label == "anomalous" and r.mask_path is None:
            raise ValidationError(f"anomalous test record {r.image_id} has no mask")

    return DatasetManifest(split=split, records=records, root=os.path.dirname(os.path.abspath(manifest_path)))


def load_mask(manifest: DatasetManifest, record: ImageRecord) -> np.ndarray:
    """Load a ground-truth mask as a boolean array and check its dimensions."""
    from PIL import Image

    if record.mask_path is None:
        raise ValidationError(f"record {record.image_id} has no mask")
    path = manifest.resolve(record.mask_path)
    if not os.path.exists(path):
        raise FormatError(f"mask file missing: {path}")
    arr = np.asarray(Image.open(path).convert("L"))
    if arr.shape != (record.height, record.width):
        raise ValidationError(
            f"mask for {record.image_id} is {arr.shape}, expected ({record.height}, {record.width})"
        )
    return arr > 0
