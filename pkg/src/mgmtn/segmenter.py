"""Group-mask segmentation network.

A UNet-style encoder-decoder whose final layer carries 8 independent 1x1
convolutional heads, one per attribute group. Mask prediction is treated as
8 parallel pixel-wise binary classification problems (group regions overlap,
so no cross-head softmax). Inputs of size 227 are reflect-padded up to the
nearest multiple of 2^depth internally and the outputs cropped back.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoint import SEG_MAGIC, load_checkpoint, load_state_arrays, save_checkpoint, state_arrays

INPUT_SIZE = 227


@dataclass(frozen=True)
class SegmenterConfig:
    input_size: int = INPUT_SIZE
    encoder_depth: int = 4
    base_channels: int = 8
    num_heads: int = 8
    threshold: float = 0.5

    def __post_init__(self):
        if self.encoder_depth < 2:
            raise ValueError("encoder_depth must be >= 2")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")

    @property
    def padded_size(self) -> int:
        mult = 2 ** self.encoder_depth
        return math.ceil(self.input_size / mult) * mult


def _double_conv(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, padding=1),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
        nn.Conv2d(cout, cout, 3, padding=1),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class SegmenterModel(nn.Module):
    """Encoder-decoder with skip connections and one mask head per group."""

    def __init__(self, config: SegmenterConfig):
        super().__init__()
        self.config = config
        chans = [config.base_channels * 2 ** i for i in range(config.encoder_depth + 1)]

        self.encoder = nn.ModuleList()
        cin = 3
        for c in chans[:-1]:
            self.encoder.append(_double_conv(cin, c))
            cin = c
        self.bottleneck = _double_conv(chans[-2], chans[-1])
        self.pool = nn.MaxPool2d(2)

        self.upsamplers = nn.ModuleList()
        self.decoder = nn.ModuleList()
        for c in reversed(chans[:-1]):
            self.upsamplers.append(nn.ConvTranspose2d(2 * c, c, 2, stride=2))
            self.decoder.append(_double_conv(2 * c, c))

        self.heads = nn.ModuleList(
            nn.Conv2d(config.base_channels, 1, 1) for _ in range(config.num_heads)
        )

    def _pad(self, x: torch.Tensor) -> torch.Tensor:
        size = self.config.input_size
        target = self.config.padded_size
        if x.shape[-1] != size or x.shape[-2] != size:
            raise ValueError(f"expected {size}x{size} input, got {tuple(x.shape[-2:])}")
        extra = target - size
        lo, hi = extra // 2, extra - extra // 2
        return F.pad(x, (lo, hi, lo, hi), mode="reflect")

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Logits of shape (B, num_heads, input_size, input_size)."""
        size = self.config.input_size
        extra = self.config.padded_size - size
        lo = extra // 2
        x = self._pad(x)
        skips = []
        for enc in self.encoder:
            x = enc(x)
            skips.append(x)
            x = self.pool(x)
        x = self.bottleneck(x)
        for up, dec, skip in zip(self.upsamplers, self.decoder, reversed(skips)):
            x = up(x)
            x = dec(torch.cat([x, skip], dim=1))
        logits = torch.cat([head(x) for head in self.heads], dim=1)
        return logits[..., lo:lo + size, lo:lo + size]


def build_segmenter(config: SegmenterConfig, seed: int) -> SegmenterModel:
    """Deterministic construction: identical seeds give bit-identical parameters."""
    torch.manual_seed(seed)
    return SegmenterModel(config)


def predict_masks(model: SegmenterModel, image: np.ndarray) -> np.ndarray:
    """8 per-pixel probability maps for one image (H, W, 3) in [0,1]."""
    if image.shape != (model.config.input_size, model.config.input_size, 3):
        raise ValueError(f"expected ({model.config.input_size}, {model.config.input_size}, 3) image")
    x = torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1))[None]).float()
    was_training = model.training
    model.eval()
    with torch.no_grad():
        probs = torch.sigmoid(model(x))[0].numpy()
    if was_training:
        model.train()
    return probs


def predict_masks_batch(model: SegmenterModel, images: torch.Tensor) -> torch.Tensor:
    """Batched probability maps; images are (B, 3, H, W) in [0,1]."""
    was_training = model.training
    model.eval()
    with torch.no_grad():
        probs = torch.sigmoid(model(images))
    if was_training:
        model.train()
    return probs


def binarize(masks: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Per-pixel threshold; >= maps to 1. Idempotent (1 >= t for t in (0,1))."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    return (np.asarray(masks) >= threshold).astype(np.uint8)


def segmentation_loss(logits: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Sum over heads of mean per-pixel binary cross-entropy."""
    per_head = F.binary_cross_entropy_with_logits(logits, gt, reduction="none")
    return per_head.mean(dim=(0, 2, 3)).sum()


def save_segmenter(path, model: SegmenterModel, seed: int, meta: dict | None = None) -> None:
    save_checkpoint(path, SEG_MAGIC, state_arrays(model), asdict(model.config), seed, meta)


def load_segmenter(path) -> tuple[SegmenterModel, int, dict]:
    arrays, config, seed, meta = load_checkpoint(path, SEG_MAGIC)
    model = SegmenterModel(SegmenterConfig(**config))
    load_state_arrays(model, arrays)
    model.eval()
    return model, seed, meta
