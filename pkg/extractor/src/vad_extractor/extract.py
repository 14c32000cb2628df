"""Category extraction: dataset walk, backbone forward, export.

Expected directory layout (the common industrial-anomaly convention; VisA
releases reorganized to this layout work unchanged):

    root/<category>/train/good/*.png
    root/<category>/test/<defect-kind>/*.png      ("good" = normal)
    root/<category>/ground_truth/<defect-kind>/<stem>_mask.png

Output: one VADF feature file per image, resized ground-truth masks, and
train/test manifests, all under the output directory.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .backbone import Backbone, preprocess
from .errors import ExtractError, LayoutError
from .formats import ExportRecord, atomic_write_bytes, write_feature_file, write_manifest

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


@dataclass
class ExtractionConfig:
    root: str
    category: str
    out_dir: str
    taps: tuple[int, ...] = (7, 10, 13)
    input_resolution: int = 224
    weights_path: str | None = None
    seed: int = 0


@dataclass
class SourceImage:
    image_id: str
    path: str
    label: str  # "normal" | "anomalous"
    mask_path: str | None = None


@dataclass
class ExtractionResult:
    train_manifest: str
    test_manifest: str
    grid_shape: tuple[int, int, int]
    images: int = 0
    feature_files: list[str] = field(default_factory=list)


def _list_images(directory: str) -> list[str]:
    names = [n for n in sorted(os.listdir(directory)) if n.lower().endswith(IMAGE_EXTENSIONS)]
    return [os.path.join(directory, n) for n in names]


def scan_category(root: str, category: str) -> tuple[list[SourceImage], list[SourceImage]]:
    """Walk one category; returns (train_images, test_images) in a stable
    (kind, filename) order."""
    cat = os.path.join(root, category)
    train_good = os.path.join(cat, "train", "good")
    test_dir = os.path.join(cat, "test")
    if not os.path.isdir(train_good) or not os.path.isdir(test_dir):
        raise LayoutError(f"category {category!r} not found under {root} (need train/good and test/)")

    train = [
        SourceImage(f"train_good_{os.path.splitext(os.path.basename(p))[0]}", p, "normal")
        for p in _list_images(train_good)
    ]
    if not train:
        raise LayoutError(f"category {category!r}: no training images in {train_good}")

    test = []
    for kind in sorted(os.listdir(test_dir)):
        kind_dir = os.path.join(test_dir, kind)
        if not os.path.isdir(kind_dir):
            continue
        for p in _list_images(kind_dir):
            stem = os.path.splitext(os.path.basename(p))[0]
            if kind == "good":
                test.append(SourceImage(f"test_good_{stem}", p, "normal"))
            else:
                mask = os.path.join(cat, "ground_truth", kind, f"{stem}_mask.png")
                if not os.path.exists(mask):
                    raise LayoutError(f"missing ground-truth mask for {p}: expected {mask}")
                test.append(SourceImage(f"test_{kind}_{stem}", p, "anomalous", mask))
    if not test:
        raise LayoutError(f"category {category!r}: no test images under {test_dir}")
    return train, test


def concat_taps(maps: list[np.ndarray]) -> np.ndarray:
    """Replicate every tap map to the first tap's resolution (nearest
    neighbor) and concatenate along channels."""
    h, w = maps[0].shape[:2]
    parts = []
    for m in maps:
        mh, mw = m.shape[:2]
        if mh > h or mw > w:
            raise ExtractError(
                f"tap map {mh}x{mw} is finer than the first tap's {h}x{w}; order taps coarse-last"
            )
        rows = (np.arange(h) * mh) // h
        cols = (np.arange(w) * mw) // w
        parts.append(m[rows[:, None], cols[None, :], :])
    return np.concatenate(parts, axis=2)


def _export_mask(src_path: str, out_path: str, resolution: int) -> None:
    mask = Image.open(src_path).convert("L").resize((resolution, resolution), resample=Image.NEAREST)
    binary = Image.fromarray((np.asarray(mask) > 0).astype(np.uint8) * 255)
    import io

    buf = io.BytesIO()
    binary.save(buf, format="PNG")
    atomic_write_bytes(out_path, buf.getvalue())


def extract_category(config: ExtractionConfig) -> ExtractionResult:
    """Extract one category end to end; returns manifest paths and shape."""
    train, test = scan_category(config.root, config.category)
    backbone = Backbone(config.taps, config.weights_path, config.seed)
    os.makedirs(config.out_dir, exist_ok=True)
    res = config.input_resolution

    result = ExtractionResult(
        train_manifest=os.path.join(config.out_dir, "train.manifest"),
        test_manifest=os.path.join(config.out_dir, "test.manifest"),
        grid_shape=(0, 0, 0),
    )

    def export(images: list[SourceImage]) -> list[ExportRecord]:
        records = []
        for src in images:
            try:
                pil = Image.open(src.path)
            except OSError as e:
                raise ExtractError(f"corrupt image {src.path}: {e}") from e
            grid = concat_taps(backbone.forward(preprocess(pil, res)))
            if result.grid_shape == (0, 0, 0):
                result.grid_shape = grid.shape
            elif grid.shape != result.grid_shape:
                raise ExtractError(f"{src.path}: grid shape {grid.shape} != {result.grid_shape}")
            feat_name = src.image_id + ".vadf"
            feat_path = os.path.join(config.out_dir, feat_name)
            write_feature_file(grid, feat_path)
            result.feature_files.append(feat_path)
            mask_name = None
            if src.mask_path is not None:
                mask_name = src.image_id + "_mask.png"
                _export_mask(src.mask_path, os.path.join(config.out_dir, mask_name), res)
            records.append(ExportRecord(src.image_id, feat_name, src.label, mask_name, res, res))
            result.images += 1
        return records

    write_manifest("train", export(train), result.train_manifest)
    write_manifest("test", export(test), result.test_manifest)
    return result
