"""Multi-scale backbone: a residual CNN emitting a three-stage feature pyramid.

For a 227x227 input the stages produce 28x28, 14x14 and 7x7 maps with channel
counts (c3, c4, c5) where each stage doubles the previous one (full-scale
512/1024/2048, desk-scale 64/128/256). The pooled final-stage vector is the
global feature. Split-attention internals of the reference backbone are out of
scope; the mask-guided mechanism only relies on this scale/channel contract.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass(frozen=True)
class BackboneConfig:
    stage_channels: tuple[int, int, int] = (64, 128, 256)
    input_size: int = 227
    blocks_per_stage: tuple[int, int, int] = (1, 1, 1)

    def __post_init__(self):
        c3, c4, c5 = self.stage_channels
        if c4 != 2 * c3 or c5 != 2 * c4:
            raise ValueError(
                f"stage channels must double: got {self.stage_channels}"
            )

    @classmethod
    def full_scale(cls) -> "BackboneConfig":
        return cls(stage_channels=(512, 1024, 2048), blocks_per_stage=(2, 2, 2))


@dataclass
class FeaturePyramid:
    """Backbone outputs: f3 (28x28), f4 (14x14), f5 (7x7), pooled global vector."""

    f3: torch.Tensor
    f4: torch.Tensor
    f5: torch.Tensor
    global_vec: torch.Tensor


class ResidualBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        if stride != 1 or cin != cout:
            self.shortcut = nn.Sequential(
                nn.Conv2d(cin, cout, 1, stride=stride, bias=False),
                nn.BatchNorm2d(cout),
            )
        else:
            self.shortcut = nn.Identity()

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


def _stage(cin: int, cout: int, blocks: int, stride: int) -> nn.Sequential:
    layers = [ResidualBlock(cin, cout, stride=stride)]
    layers.extend(ResidualBlock(cout, cout) for _ in range(blocks - 1))
    return nn.Sequential(*layers)


class Backbone(nn.Module):
    def __init__(self, config: BackboneConfig = BackboneConfig()):
        super().__init__()
        self.config = config
        c3, c4, c5 = config.stage_channels
        stem_ch = max(8, c3 // 4)
        # 227 -> 114 -> 56, then three stride-2 stages: 28, 14, 7
        self.stem = nn.Sequential(
            nn.Conv2d(3, stem_ch, 7, stride=2, padding=3, bias=False),
            nn.BatchNorm2d(stem_ch),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(3, stride=2),
        )
        pre_ch = max(stem_ch, c3 // 2)
        self.stage1 = _stage(stem_ch, pre_ch, config.blocks_per_stage[0], stride=1)
        self.stage2 = _stage(pre_ch, c3, config.blocks_per_stage[0], stride=2)
        self.stage3 = _stage(c3, c4, config.blocks_per_stage[1], stride=2)
        self.stage4 = _stage(c4, c5, config.blocks_per_stage[2], stride=2)

    def forward(self, x: torch.Tensor) -> FeaturePyramid:
        x = self.stem(x)
        x = self.stage1(x)
        f3 = self.stage2(x)
        f4 = self.stage3(f3)
        f5 = self.stage4(f4)
        return FeaturePyramid(f3=f3, f4=f4, f5=f5, global_vec=global_feature(f5))


def build_backbone(config: BackboneConfig, seed: int) -> Backbone:
    torch.manual_seed(seed)
    return Backbone(config)


def global_feature(f5: torch.Tensor) -> torch.Tensor:
    """Global average pooling of the final-stage map to a (B, c5) vector."""
    return f5.mean(dim=(-2, -1))


def extract(backbone: Backbone, images: torch.Tensor) -> FeaturePyramid:
    """Feature pyramid for standardized (B, 3, H, W) images."""
    size = backbone.config.input_size
    if images.shape[-2:] != (size, size):
        raise ValueError(f"expected {size}x{size} input, got {tuple(images.shape[-2:])}")
    return backbone(images)


def standardize(images: torch.Tensor, mean, std) -> torch.Tensor:
    """Channel-wise (x - mean) / std for images already scaled to [0,1]."""
    mean = torch.as_tensor(mean, dtype=images.dtype).view(1, -1, 1, 1)
    std = torch.as_tensor(std, dtype=images.dtype).view(1, -1, 1, 1)
    return (images - mean) / std
