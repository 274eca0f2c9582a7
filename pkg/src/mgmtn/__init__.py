"""Mask-guided multi-task face attribute recognition.

Group masks learned from facial landmarks gate a multi-scale feature pyramid;
per-group features are fused with the global representation through channel
attention and classified by grouped heads. Ships with a procedural
schematic-face benchmark so every stage trains and verifies on a CPU.
"""

from .grouping import (
    CELEBA_ATTRIBUTES,
    AttributeGrouping,
    GroupingError,
    load_grouping,
    write_grouping,
)
from .geometry import (
    Rect,
    keypoints_to_group_rects,
    load_keypoint_groups,
    load_mirror_table,
    mask_f1,
    rasterize,
    rect_of_support,
    scale_rect,
    validate_keypoints,
)
from .selection import (
    MaskedGroupFeature,
    apply_mask,
    group_pool,
    prepare_group_masks,
    resize_mask,
    scale_mask_region,
)
from .fusion import (
    GroupGlobalFusion,
    channel_attention,
    channel_descriptor,
    fuse_global,
    fuse_group,
    fused_dim,
    reweight,
)
from .losses import EFLState, bce_loss, efl_loss, focal_loss
from .metrics import ConfusionCounts, accuracy, count_predictions, mean_accuracy, metrics_report
from .segmenter import SegmenterConfig, binarize, build_segmenter, predict_masks
from .backbone import Backbone, BackboneConfig, FeaturePyramid, extract, global_feature
from .synthetic import SynthConfig, generate_sample, make_label_twins, synth_generate
from .model import FarModel, MaskBank, ModelConfig, build_far_model
from .config import RunConfig

__version__ = "0.1.0"
