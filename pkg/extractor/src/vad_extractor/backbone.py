"""MobileNetV2 tap extraction.

A "tap" is an index into ``torchvision.models.mobilenet_v2().features``; the
activation map produced by that block is captured as one layer of the patch
descriptor. At a 224x224 input the block output resolutions are:

    blocks 0       112x112 (32 ch)
    blocks 1       112x112 (16 ch)
    blocks 2-3     56x56   (24 ch)
    blocks 4-6     28x28   (32 ch)
    blocks 7-10    14x14   (64 ch)
    blocks 11-13   14x14   (96 ch)
    blocks 14-16   7x7     (160 ch)
    blocks 17-18   7x7     (320 / 1280 ch)

so taps (7, 10, 13) concatenate to 64+64+96 = 224 channels at 14x14 and taps
(4, 7, 10) to 32+64+64 = 160 channels at 28x28.

Pretrained weights are loaded from a local state-dict file when given;
otherwise the backbone is randomly initialized from a fixed seed, which keeps
extraction deterministic but is only useful for plumbing and shape checks.
"""

from __future__ import annotations

import numpy as np
import torch
from torchvision.models import mobilenet_v2

from .errors import ExtractError

IMAGENET_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
IMAGENET_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


class Backbone:
    def __init__(self, taps: tuple[int, ...], weights_path: str | None = None, seed: int = 0):
        if not taps:
            raise ExtractError("at least one tap index is required")
        torch.manual_seed(seed)
        model = mobilenet_v2(weights=None)
        if weights_path is not None:
            try:
                state = torch.load(weights_path, map_location="cpu")
            except (OSError, RuntimeError) as e:
                raise ExtractError(f"cannot load weights from {weights_path}: {e}") from e
            model.load_state_dict(state)
        model.eval()
        self.blocks = model.features
        n = len(self.blocks)
        for t in taps:
            if not 0 <= t < n:
                raise ExtractError(f"tap {t} out of range; backbone has blocks 0..{n - 1}")
        self.taps = tuple(taps)
        self.weights_path = weights_path

    def tap_channels(self, input_resolution: int = 224) -> list[int]:
        """Channel count of each tap, probed with a dummy forward pass."""
        maps = self.forward(np.zeros((input_resolution, input_resolution, 3), dtype=np.float32))
        return [m.shape[2] for m in maps]

    def forward(self, image: np.ndarray) -> list[np.ndarray]:
        """Run one preprocessed (H, W, 3) image; returns (h, w, c) float32
        activation maps, one per tap, in tap order."""
        x = torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1)))[None]
        wanted = {t: i for i, t in enumerate(self.taps)}
        out: list[np.ndarray | None] = [None] * len(self.taps)
        with torch.no_grad():
            for idx in range(max(self.taps) + 1):
                x = self.blocks[idx](x)
                if idx in wanted:
                    out[wanted[idx]] = x[0].numpy().transpose(1, 2, 0).astype(np.float32)
        return out  # type: ignore[return-value]


def preprocess(pil_image, input_resolution: int) -> np.ndarray:
    """Resize to the square input resolution and apply the standard
    backbone-pretraining normalization; returns (H, W, 3) float32."""
    from PIL import Image

    rgb = pil_image.convert("RGB").resize(
        (input_resolution, input_resolution), resample=Image.BILINEAR
    )
    arr = np.asarray(rgb, dtype=np.float32) / 255.0
    return (arr - IMAGENET_MEAN) / IMAGENET_STD
