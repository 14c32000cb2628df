import os

import numpy as np
import pytest
from PIL import Image


def make_image_corpus(root, category="widget", n_train=6, n_test_good=3, n_test_defect=3,
                      size=128, seed=0):
    """Synthetic category in the standard train/test/ground_truth layout.

    Normal images are a smooth gradient plus low noise; defective ones add a
    bright square whose footprint becomes the ground-truth mask.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size]
    base = (80 + 60 * xx / size + 40 * yy / size).astype(np.float32)

    def normal_image():
        noisy = base + rng.normal(0, 6, (size, size))
        return np.clip(noisy, 0, 255).astype(np.uint8)

    def save(arr, path):
        os.makedirs(os.path.dirname(path), exist_ok=True)
        Image.fromarray(arr).convert("RGB").save(path)

    cat = os.path.join(root, category)
    for i in range(n_train):
        save(normal_image(), os.path.join(cat, "train", "good", f"{i:03d}.png"))
    for i in range(n_test_good):
        save(normal_image(), os.path.join(cat, "test", "good", f"{i:03d}.png"))
    for i in range(n_test_defect):
        img = normal_image().astype(np.float32)
        side = size // 4
        r = int(rng.integers(0, size - side))
        c = int(rng.integers(0, size - side))
        img[r : r + side, c : c + side] += 120
        save(np.clip(img, 0, 255).astype(np.uint8),
             os.path.join(cat, "test", "scratch", f"{i:03d}.png"))
        mask = np.zeros((size, size), dtype=np.uint8)
        mask[r : r + side, c : c + side] = 255
        save(mask, os.path.join(cat, "ground_truth", "scratch", f"{i:03d}_mask.png"))
    return root, category


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    root = str(tmp_path_factory.mktemp("mvtec_like"))
    return make_image_corpus(root)


@pytest.fixture(scope="session")
def corpus_factory():
    return make_image_corpus


@pytest.fixture(scope="session")
def exported(corpus, tmp_path_factory):
    from vad_extractor.extract import ExtractionConfig, extract_category

    root, category = corpus
    out = str(tmp_path_factory.mktemp("export"))
    result = extract_category(ExtractionConfig(root=root, category=category, out_dir=out))
    return out, result
