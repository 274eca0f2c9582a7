"""Mask-guided feature selection.

Group masks predicted at image resolution are block-average downsampled to
each pyramid scale and multiplied elementwise into the feature maps, zeroing
activation outside the group's region. Max-pooling the masked map then yields
one vector per group per scale, with argmax locations retained for the
activation-locality analysis.

These are the reference (numpy) implementations; the training path mirrors
the same arithmetic on torch tensors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Rect, rasterize, rect_of_support, scale_rect


def _block_edges(src: int, dst: int) -> np.ndarray:
    # contiguous partition of src cells into dst blocks: edge k = floor(k*src/dst)
    return (np.arange(dst + 1) * src) // dst


def resize_mask(mask: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Block average pooling of a probability map onto a coarser grid.

    Each target cell is the mean of its contiguous source block (block edges
    at floor(k*H/h)). Values stay in [0,1]; an all-ones mask stays exactly
    ones, and a target cell is exactly 0 iff its entire block is 0. Resizing
    to the source size is the identity.
    """
    m = np.asarray(mask, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("mask must be 2-D")
    th, tw = target
    sh, sw = m.shape
    if th > sh or tw > sw:
        raise ValueError(f"target {target} larger than source {m.shape}")
    if (th, tw) == (sh, sw):
        return m.copy()
    re = _block_edges(sh, th)
    ce = _block_edges(sw, tw)
    # sum over source rows/cols via cumulative sums along each axis
    csum = np.zeros((sh + 1, sw + 1))
    csum[1:, 1:] = np.cumsum(np.cumsum(m, axis=0), axis=1)
    block = (
        csum[re[1:], :][:, ce[1:]]
        - csum[re[:-1], :][:, ce[1:]]
        - csum[re[1:], :][:, ce[:-1]]
        + csum[re[:-1], :][:, ce[:-1]]
    )
    areas = np.outer(np.diff(re), np.diff(ce)).astype(np.float64)
    return block / areas


@dataclass
class MaskedGroupFeature:
    """A feature map gated by one group's mask at one pyramid scale."""

    group_index: int
    scale_index: int
    map: np.ndarray       # (C, H, W)
    support: np.ndarray   # (H, W) mask actually applied (soft or binary)


def apply_mask(feature: np.ndarray, mask: np.ndarray, group_index: int = 0,
               scale_index: int = 3) -> MaskedGroupFeature:
    """Elementwise product of a (C, H, W) feature map with a resized mask.

    The mask may be supplied at image resolution (it is block-downsampled to
    the feature grid) or already at feature resolution. Soft masks scale
    activations; binary masks gate them, so entries outside the support come
    out exactly zero.
    """
    f = np.asarray(feature, dtype=np.float64)
    if f.ndim != 3:
        raise ValueError("feature must be (C, H, W)")
    h, w = f.shape[1:]
    m = np.asarray(mask, dtype=np.float64)
    if m.shape != (h, w):
        m = resize_mask(m, (h, w))
    return MaskedGroupFeature(group_index, scale_index, f * m[None], m)


def group_pool(masked: MaskedGroupFeature) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel spatial max and its location.

    Ties resolve to the first occurrence in row-major order, so repeated runs
    and the activation-location analysis are deterministic. Returns
    (values (C,), locations (C, 2) as (row, col)).
    """
    c, h, w = masked.map.shape
    flat = masked.map.reshape(c, h * w)
    idx = np.argmax(flat, axis=1)
    values = flat[np.arange(c), idx]
    locs = np.stack([idx // w, idx % w], axis=1)
    return values, locs


def mask_support(mask: np.ndarray) -> np.ndarray:
    """Boolean support of a (possibly soft) mask: strictly positive cells."""
    return np.asarray(mask) > 0


def argmax_inside_fraction(masked: MaskedGroupFeature) -> float:
    """Fraction of per-channel argmax locations lying inside the mask support."""
    _, locs = group_pool(masked)
    support = mask_support(masked.support)
    inside = support[locs[:, 0], locs[:, 1]]
    return float(inside.mean())


# ---------------------------------------------------------------------------
# Mask preparation for the recognition pipeline
# ---------------------------------------------------------------------------

def prepare_group_masks(probs: np.ndarray, object_index: int, threshold: float = 0.5,
                        binarize: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Post-process predicted group probability maps for feature selection.

    A group whose mask is entirely below threshold would zero out its feature
    vectors, so it falls back to the Object mask. Returns (masks, fallback
    flags); masks are soft by default, thresholded when ``binarize`` is set.
    """
    probs = np.asarray(probs, dtype=np.float64)
    masks = probs.copy()
    n = probs.shape[0]
    fallback = np.zeros(n, dtype=bool)
    for j in range(n):
        if not (probs[j] >= threshold).any():
            masks[j] = probs[object_index]
            fallback[j] = True
    if binarize:
        masks = (masks >= threshold).astype(np.float64)
    return masks, fallback


def support_rects(masks: np.ndarray, threshold: float = 0.5) -> list[Rect | None]:
    """Bounding rectangle of each mask's thresholded support (the PMR)."""
    return [rect_of_support(m, threshold) for m in np.asarray(masks)]


def scale_mask_region(mask: np.ndarray, area_ratio: float,
                      threshold: float = 0.5) -> np.ndarray:
    """Grow or shrink a predicted mask's region for the robustness ablation.

    The mask's support rectangle is rescaled about its center by the given
    area ratio and rasterized back. A ratio of exactly 1.0 returns the mask
    unchanged (the identity row of the ablation); empty masks pass through.
    """
    if area_ratio == 1.0:
        return np.asarray(mask, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64)
    rect = rect_of_support(m, threshold)
    if rect is None:
        return m
    scaled = scale_rect(rect, area_ratio)
    return rasterize(scaled, *m.shape).astype(np.float64)
