"""Group-global feature fusion.

Masked group features at the two selected pyramid scales are reweighted by a
channel attention gate (a single linear map over the spatially averaged
descriptor, squashed by a sigmoid), max-pooled to vectors, concatenated
across scales, and finally concatenated with the global feature. At full
scale this yields the 512+1024 = 1536 group vector and the 1536+2048 = 3584
fused representation.

Attention parameters are per scale and shared across the 8 groups. Spatial
and cascaded channel-spatial variants exist for the attention ablation.
"""

from __future__ import annotations

import torch
import torch.nn as nn

ATTENTION_VARIANTS = ("none", "ca", "sa", "ca-sa")
FEATURE_SETS = ("gl", "gr4", "gr3gr4", "full")


def channel_descriptor(feature: torch.Tensor) -> torch.Tensor:
    """Per-channel spatial mean of a (..., C, H, W) map."""
    return feature.mean(dim=(-2, -1))


def channel_attention(descriptor: torch.Tensor, weight: torch.Tensor,
                      bias: torch.Tensor) -> torch.Tensor:
    """Sigmoid-gated linear map of the descriptor; entries in (0,1)."""
    if weight.shape[0] != weight.shape[1] or weight.shape[1] != descriptor.shape[-1]:
        raise ValueError(
            f"attention weight {tuple(weight.shape)} incompatible with "
            f"descriptor of width {descriptor.shape[-1]}"
        )
    return torch.sigmoid(descriptor @ weight.T + bias)


def reweight(feature: torch.Tensor, gate: torch.Tensor) -> torch.Tensor:
    """Broadcast channel gate over all spatial positions of (..., C, H, W)."""
    if gate.shape[-1] != feature.shape[-3]:
        raise ValueError("channel counts disagree")
    return feature * gate[..., :, None, None]


def fuse_group(pooled3: torch.Tensor, pooled4: torch.Tensor) -> torch.Tensor:
    """Concatenate the two per-scale pooled group vectors, scale-3 first."""
    return torch.cat([pooled3, pooled4], dim=-1)


def fuse_global(group_vec: torch.Tensor, global_vec: torch.Tensor) -> torch.Tensor:
    """Concatenate the group vector with the global vector."""
    return torch.cat([group_vec, global_vec], dim=-1)


def fused_dim(c3: int, c4: int, c5: int, feature_set: str = "full") -> int:
    """Width of the fused representation for a feature-set ablation variant."""
    return {
        "gl": c5,
        "gr4": c4,
        "gr3gr4": c3 + c4,
        "full": c3 + c4 + c5,
    }[feature_set]


class SpatialAttention(nn.Module):
    """Position gate from channel-mean and channel-max statistic maps."""

    def __init__(self, kernel_size: int = 7):
        super().__init__()
        self.conv = nn.Conv2d(2, 1, kernel_size, padding=kernel_size // 2)

    def forward(self, feature: torch.Tensor) -> torch.Tensor:
        stats = torch.stack(
            [feature.mean(dim=-3), feature.amax(dim=-3)], dim=-3
        )
        shape = stats.shape
        gate = torch.sigmoid(self.conv(stats.reshape(-1, *shape[-3:])))
        return gate.reshape(*shape[:-3], 1, *shape[-2:])


class ScaleAttention(nn.Module):
    """Attention for one pyramid scale, selectable per the ablation variants.

    ``bottleneck`` switches the channel gate to the two-layer
    squeeze-and-excitation form (reduction then expansion) instead of the
    default single linear map.
    """

    def __init__(self, channels: int, variant: str = "ca", bottleneck: int = 0):
        super().__init__()
        if variant not in ATTENTION_VARIANTS:
            raise ValueError(f"unknown attention variant {variant!r}")
        self.variant = variant
        self.channels = channels
        if variant in ("ca", "ca-sa"):
            if bottleneck:
                self.gate = nn.Sequential(
                    nn.Linear(channels, max(1, channels // bottleneck)),
                    nn.ReLU(inplace=True),
                    nn.Linear(max(1, channels // bottleneck), channels),
                )
            else:
                self.gate = nn.Linear(channels, channels)
        if variant in ("sa", "ca-sa"):
            self.spatial = SpatialAttention()

    def forward(self, feature: torch.Tensor) -> torch.Tensor:
        out = feature
        if self.variant in ("ca", "ca-sa"):
            psi = torch.sigmoid(self.gate(channel_descriptor(out)))
            out = reweight(out, psi)
        if self.variant in ("sa", "ca-sa"):
            out = out * self.spatial(out)
        return out


class GroupGlobalFusion(nn.Module):
    """Attention, pooling and concatenation for all groups at once.

    Inputs: masked group features gr3 (B, G, c3, 14, 14) and gr4
    (B, G, c4, 7, 7) plus the global vector (B, c5). Output (B, G, D) where D
    depends on the feature-set variant. Attention parameters are shared
    across groups, so identical masked features produce identical fusions.
    """

    def __init__(self, c3: int, c4: int, c5: int, attention: str = "ca",
                 feature_set: str = "full", bottleneck: int = 0):
        super().__init__()
        if feature_set not in FEATURE_SETS:
            raise ValueError(f"unknown feature set {feature_set!r}")
        self.c3, self.c4, self.c5 = c3, c4, c5
        self.feature_set = feature_set
        self.attend3 = ScaleAttention(c3, attention, bottleneck)
        self.attend4 = ScaleAttention(c4, attention, bottleneck)

    @property
    def output_dim(self) -> int:
        return fused_dim(self.c3, self.c4, self.c5, self.feature_set)

    def forward(self, gr3: torch.Tensor, gr4: torch.Tensor,
                global_vec: torch.Tensor) -> torch.Tensor:
        num_groups = gr3.shape[1]
        parts = []
        if self.feature_set in ("gr3gr4", "full"):
            parts.append(self.attend3(gr3).amax(dim=(-2, -1)))
        if self.feature_set in ("gr4", "gr3gr4", "full"):
            parts.append(self.attend4(gr4).amax(dim=(-2, -1)))
        if self.feature_set in ("gl", "full"):
            parts.append(global_vec[:, None, :].expand(-1, num_groups, -1))
        return torch.cat(parts, dim=-1)
