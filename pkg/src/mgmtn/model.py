"""The full mask-guided recognition network.

Pipeline per image: backbone pyramid -> group features from the 28x28 stage
pooled to 14x14 and the 14x14 stage pooled to 7x7 -> elementwise gating by
the (frozen) segmenter's group masks at matching resolutions -> channel
attention, max-pool, concatenation with the global vector -> one two-layer
classification head per group, assembled into 40 logits.

The segmenter is deliberately *not* a submodule: its parameters never enter
recognition optimizers, which keeps the frozen-mask contract structural.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .backbone import Backbone, BackboneConfig, standardize
from .checkpoint import (
    FAR_MAGIC,
    load_checkpoint,
    load_state_arrays,
    save_checkpoint,
    state_arrays,
)
from .fusion import GroupGlobalFusion
from .geometry import rasterize, scale_rect, Rect
from .grouping import AttributeGrouping, load_grouping
from .heads import GlobalHead, GroupHeads
from .segmenter import SegmenterModel, predict_masks_batch
from .selection import prepare_group_masks, resize_mask, support_rects

GROUP_SCALES = ((14, 14), (7, 7))


@dataclass(frozen=True)
class ModelConfig:
    backbone: BackboneConfig = BackboneConfig()
    attention: str = "ca"
    feature_set: str = "full"
    head_hidden: int = 64
    dropout: float = 0.5
    mask_mode: str = "soft"            # soft probabilities or binarized gating
    mask_threshold: float = 0.5
    mean: tuple[float, float, float] = (0.5, 0.5, 0.5)
    std: tuple[float, float, float] = (0.25, 0.25, 0.25)

    def __post_init__(self):
        if self.mask_mode not in ("soft", "binary"):
            raise ValueError("mask_mode must be 'soft' or 'binary'")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["backbone"] = asdict(self.backbone)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        bb = d.pop("backbone")
        bb["stage_channels"] = tuple(bb["stage_channels"])
        bb["blocks_per_stage"] = tuple(bb["blocks_per_stage"])
        d["mean"] = tuple(d["mean"])
        d["std"] = tuple(d["std"])
        return cls(backbone=BackboneConfig(**bb), **d)


class FarModel(nn.Module):
    def __init__(self, config: ModelConfig, grouping: AttributeGrouping):
        super().__init__()
        self.config = config
        self.grouping = grouping
        c3, c4, c5 = config.backbone.stage_channels
        self.backbone = Backbone(config.backbone)
        self.fusion = GroupGlobalFusion(
            c3, c4, c5, attention=config.attention, feature_set=config.feature_set
        )
        self.group_heads = GroupHeads(
            grouping, self.fusion.output_dim, hidden=config.head_hidden,
            dropout=config.dropout,
        )
        self.global_head = GlobalHead(
            c5, len(grouping.attribute_names), hidden=config.head_hidden,
            dropout=config.dropout,
        )

    def standardized(self, images: torch.Tensor) -> torch.Tensor:
        return standardize(images, self.config.mean, self.config.std)

    def group_maps(self, f3: torch.Tensor, f4: torch.Tensor,
                   m14: torch.Tensor, m7: torch.Tensor):
        """Masked per-group features at the two selection scales.

        f3 (B, c3, 28, 28) is average-pooled to 14x14 and f4 (B, c4, 14, 14)
        to 7x7, then gated per group: out[b, g] = mask[b, g] * feature[b].
        """
        f3d = F.avg_pool2d(f3, 2)
        f4d = F.avg_pool2d(f4, 2)
        gr3 = f3d[:, None] * m14[:, :, None]
        gr4 = f4d[:, None] * m7[:, :, None]
        return gr3, gr4

    def forward(self, images: torch.Tensor, m14: torch.Tensor | None = None,
                m7: torch.Tensor | None = None, mode: str = "group") -> torch.Tensor:
        """40 attribute logits. ``mode='global'`` uses only the global head."""
        pyramid = self.backbone(self.standardized(images))
        if mode == "global":
            return self.global_head(pyramid.global_vec)
        if m14 is None or m7 is None:
            raise ValueError("group mode requires group masks at both scales")
        gr3, gr4 = self.group_maps(pyramid.f3, pyramid.f4, m14, m7)
        fused = self.fusion(gr3, gr4, pyramid.global_vec)
        return self.group_heads(fused)


def build_far_model(config: ModelConfig, grouping: AttributeGrouping | None,
                    seed: int) -> FarModel:
    torch.manual_seed(seed)
    return FarModel(config, grouping or load_grouping())


def save_far_model(path, model: FarModel, seed: int, meta: dict | None = None,
                   extra_arrays: dict | None = None) -> None:
    arrays = state_arrays(model)
    if extra_arrays:
        arrays.update(extra_arrays)
    save_checkpoint(path, FAR_MAGIC, arrays, model.config.to_dict(), seed, meta)


def load_far_model(path, grouping: AttributeGrouping | None = None):
    """Returns (model, seed, meta, extra arrays such as the loss state)."""
    arrays, config, seed, meta = load_checkpoint(path, FAR_MAGIC)
    model = FarModel(ModelConfig.from_dict(config), grouping or load_grouping())
    model_keys = set(model.state_dict().keys())
    extra = {k: v for k, v in arrays.items() if k not in model_keys}
    load_state_arrays(model, {k: v for k, v in arrays.items() if k in model_keys})
    model.eval()
    return model, seed, meta, extra


# ---------------------------------------------------------------------------
# Precomputed masks
# ---------------------------------------------------------------------------

@dataclass
class MaskBank:
    """Frozen-segmenter mask predictions for a dataset, downsampled once.

    Holds per-sample, per-group masks at the two selection scales plus each
    mask's support rectangle (the predicted mask region used by the scaling
    ablation). Rectangles of empty supports are NaN.
    """

    m14: np.ndarray       # (N, 8, 14, 14) float32
    m7: np.ndarray        # (N, 8, 7, 7) float32
    rects: np.ndarray     # (N, 8, 4) float64, x0 y0 x1 y1 normalized
    fallbacks: int = 0

    def tensors(self, idx) -> tuple[torch.Tensor, torch.Tensor]:
        return (
            torch.from_numpy(self.m14[idx]).float(),
            torch.from_numpy(self.m7[idx]).float(),
        )


def masks_for_images(segmenter: SegmenterModel, images: torch.Tensor,
                     grouping: AttributeGrouping, threshold: float = 0.5,
                     mask_mode: str = "soft"):
    """Predict, post-process and downsample group masks for a batch.

    Returns (m14, m7, rects, fallback count) as numpy arrays.
    """
    object_index = grouping.group_index("Object")
    probs = predict_masks_batch(segmenter, images).numpy()
    n, g = probs.shape[:2]
    m14 = np.zeros((n, g, *GROUP_SCALES[0]), dtype=np.float32)
    m7 = np.zeros((n, g, *GROUP_SCALES[1]), dtype=np.float32)
    rects = np.full((n, g, 4), np.nan)
    fallbacks = 0
    for i in range(n):
        masks, fb = prepare_group_masks(
            probs[i], object_index, threshold=threshold,
            binarize=(mask_mode == "binary"),
        )
        fallbacks += int(fb.sum())
        for j in range(g):
            m14[i, j] = resize_mask(masks[j], GROUP_SCALES[0])
            m7[i, j] = resize_mask(masks[j], GROUP_SCALES[1])
        for j, rect in enumerate(support_rects(masks, threshold)):
            if rect is not None:
                rects[i, j] = rect.as_array()
    return m14, m7, rects, fallbacks


def scale_mask_bank(bank: MaskBank, area_ratio: float) -> MaskBank:
    """Mask bank with every predicted region rescaled by ``area_ratio``.

    Ratio 1.0 returns the bank untouched (identity row of the ablation).
    Scaled regions are rasterized as rectangles directly at each selection
    scale; empty-support groups keep their original masks.
    """
    if area_ratio == 1.0:
        return bank
    n, g = bank.m14.shape[:2]
    m14 = bank.m14.copy()
    m7 = bank.m7.copy()
    for i in range(n):
        for j in range(g):
            if np.isnan(bank.rects[i, j, 0]):
                continue
            rect = scale_rect(Rect(*bank.rects[i, j]), area_ratio)
            m14[i, j] = rasterize(rect, *GROUP_SCALES[0]).astype(np.float32)
            m7[i, j] = rasterize(rect, *GROUP_SCALES[1]).astype(np.float32)
    return MaskBank(m14=m14, m7=m7, rects=bank.rects.copy(), fallbacks=bank.fallbacks)
