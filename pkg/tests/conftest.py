import os

import numpy as np
import pytest
from PIL import Image

from vadlite.features import DatasetManifest, FeatureGrid, ImageRecord, write_feature_file, write_manifest

PIXEL_SCALE = 4  # pixel resolution per patch cell in synthetic datasets


def make_synthetic_dataset(
    root,
    n_train=10,
    n_test_normal=6,
    n_test_anom=6,
    h=8,
    w=8,
    d=16,
    seed=0,
    shift_sigmas=4.0,
    anom_fraction=0.1,
):
    """Fixed per-position Gaussian generator; anomalies shift a fraction of
    patches by a multiple of the generator sigma. Returns (train_manifest_path,
    test_manifest_path).
    """
    os.makedirs(root, exist_ok=True)
    rng = np.random.default_rng(seed)
    mean = rng.standard_normal((h, w, d)) * 2.0
    sigma = 1.0
    n_shift = max(1, round(anom_fraction * h * w))
    img_h, img_w = h * PIXEL_SCALE, w * PIXEL_SCALE

    def sample_grid():
        return (mean + sigma * rng.standard_normal((h, w, d))).astype(np.float32)

    train_records = []
    for i in range(n_train):
        name = f"train{i:03d}"
        write_feature_file(FeatureGrid(sample_grid()), os.path.join(root, name + ".vadf"))
        train_records.append(ImageRecord(name, name + ".vadf", "normal", None, img_h, img_w))
    train_path = os.path.join(root, "train.manifest")
    write_manifest(DatasetManifest("train", train_records, root), train_path)

    test_records = []
    for i in range(n_test_normal):
        name = f"good{i:03d}"
        write_feature_file(FeatureGrid(sample_grid()), os.path.join(root, name + ".vadf"))
        test_records.append(ImageRecord(name, name + ".vadf", "normal", None, img_h, img_w))
    for i in range(n_test_anom):
        name = f"anom{i:03d}"
        grid = sample_grid()
        flat = rng.choice(h * w, size=n_shift, replace=False)
        patch_mask = np.zeros((h, w), dtype=bool)
        for f in flat:
            grid[f // w, f % w] += shift_sigmas * sigma
            patch_mask[f // w, f % w] = True
        write_feature_file(FeatureGrid(grid), os.path.join(root, name + ".vadf"))
        pixel_mask = np.kron(patch_mask, np.ones((PIXEL_SCALE, PIXEL_SCALE), dtype=bool))
        mask_name = name + "_mask.png"
        Image.fromarray((pixel_mask * 255).astype(np.uint8)).save(os.path.join(root, mask_name))
        test_records.append(ImageRecord(name, name + ".vadf", "anomalous", mask_name, img_h, img_w))
    test_path = os.path.join(root, "test.manifest")
    write_manifest(DatasetManifest("test", test_records, root), test_path)
    return train_path, test_path


@pytest.fixture(scope="session")
def synthetic_dataset_factory():
    return make_synthetic_dataset


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("smallds")
    return make_synthetic_dataset(str(root))
