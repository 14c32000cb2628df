"""Post-export validation of a feature directory.

Re-checks every exported artifact against the interchange-format invariants:
header magic/version, exact payload size, finite values, one consistent grid
shape, label vocabulary, split rules (train = normal only, anomalous test
records carry masks), and mask presence/dimensions.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import ExtractError
from .formats import FEATURE_MAGIC, FEATURE_VERSION, HEADER_BYTES, MANIFEST_MAGIC, _HEADER


@dataclass
class VerifyReport:
    out_dir: str
    images: int = 0
    grid_shapes: set = field(default_factory=set)
    issues: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues

    def lines(self) -> list[str]:
        out = [f"directory\t{self.out_dir}", f"images\t{self.images}"]
        for shape in sorted(self.grid_shapes):
            out.append(f"grid_shape\t{shape[0]}x{shape[1]}x{shape[2]}")
        if self.ok:
            out.append("status\tok")
        else:
            out.extend(f"issue\t{msg}" for msg in self.issues)
            out.append(f"status\t{len(self.issues)} issue(s)")
        return out


def _check_feature_file(path: str, report: VerifyReport) -> None:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        report.issues.append(f"{path}: unreadable ({e})")
        return
    if len(data) < HEADER_BYTES:
        report.issues.append(f"{path}: shorter than the {HEADER_BYTES}-byte header")
        return
    magic, version, h, w, d = _HEADER.unpack_from(data)
    if magic != FEATURE_MAGIC:
        report.issues.append(f"{path}: bad magic {magic!r}")
        return
    if version != FEATURE_VERSION:
        report.issues.append(f"{path}: unsupported version {version}")
        return
    if min(h, w, d) < 1:
        report.issues.append(f"{path}: empty dimension in {h}x{w}x{d}")
        return
    expected = HEADER_BYTES + 4 * h * w * d
    if len(data) != expected:
        report.issues.append(f"{path}: {len(data)} bytes on disk, header implies {expected}")
        return
    values = np.frombuffer(data, dtype="<f4", offset=HEADER_BYTES)
    if not np.isfinite(values).all():
        report.issues.append(f"{path}: non-finite payload values")
        return
    report.grid_shapes.add((h, w, d))


def _parse_manifest(path: str):
    with open(path, "r", encoding="utf-8") as f:
        lines = [ln.rstrip("\n") for ln in f if ln.strip()]
    head = lines[0].split() if lines else []
    if len(head) != 3 or head[0] != MANIFEST_MAGIC:
        raise ExtractError(f"{path}: bad manifest header")
    return head[2], [ln.split("\t") for ln in lines[1:]]


def verify_export(out_dir: str) -> VerifyReport:
    report = VerifyReport(out_dir=out_dir)
    for split_name in ("train", "test"):
        manifest_path = os.path.join(out_dir, f"{split_name}.manifest")
        if not os.path.exists(manifest_path):
            report.issues.append(f"{manifest_path}: missing")
            continue
        try:
            split, rows = _parse_manifest(manifest_path)
        except (OSError, ExtractError) as e:
            report.issues.append(str(e))
            continue
        if split != split_name:
            report.issues.append(f"{manifest_path}: declares split {split!r}")
        for row in rows:
            if len(row) != 6:
                report.issues.append(f"{manifest_path}: malformed record {row!r}")
                continue
            image_id, feat, label, mask, h, w = row
            report.images += 1
            if label not in ("normal", "anomalous"):
                report.issues.append(f"{image_id}: unknown label {label!r}")
            if split_name == "train" and label != "normal":
                report.issues.append(f"{image_id}: non-normal record in train split")
            feat_path = os.path.join(out_dir, feat)
            if os.path.exists(feat_path):
                _check_feature_file(feat_path, report)
            else:
                report.issues.append(f"{image_id}: feature file {feat} missing")
            if label == "anomalous" and mask == "-":
                report.issues.append(f"{image_id}: anomalous record without a mask")
            if mask != "-":
                mask_path = os.path.join(out_dir, mask)
                if not os.path.exists(mask_path):
                    report.issues.append(f"{image_id}: mask {mask} missing")
                else:
                    arr = np.asarray(Image.open(mask_path).convert("L"))
                    if arr.shape != (int(h), int(w)):
                        report.issues.append(
                            f"{image_id}: mask is {arr.shape[0]}x{arr.shape[1]}, record says {h}x{w}"
                        )
    if len(report.grid_shapes) > 1:
        report.issues.append(f"inconsistent grid shapes: {sorted(report.grid_shapes)}")
    return report
