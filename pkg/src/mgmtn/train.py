"""Training loops and experiment drivers.

Covers segmenter training (with per-epoch per-group overlap F1 logging),
the three-phase recognition schedule (global baseline, per-group tuning with
a frozen backbone, joint training with the segmenter always frozen),
evaluation, the mask-region scaling table, the attention/feature ablations,
and the activation-location inspection.

Reproducibility: every loop reseeds from (run seed, epoch) at epoch start and
derives per-sample augmentation streams from (seed, epoch, index), so a run
resumed from a checkpoint continues bit-identically.
"""

from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path

import numpy as np
import torch

from .checkpoint import (
    SEG_MAGIC,
    load_checkpoint,
    load_optimizer_arrays,
    load_state_arrays,
    optimizer_arrays,
    parameter_hash,
    state_arrays,
)
from .backbone import BackboneConfig
from .config import RunConfig
from .data import AugmentConfig, FaceDataset, augment, eval_transform
from .geometry import load_mirror_table, mask_f1
from .grouping import AttributeGrouping, load_grouping
from .losses import AttributeLoss, LossConfig
from .metrics import ConfusionCounts, count_predictions, metrics_report
from .model import (
    FarModel,
    MaskBank,
    ModelConfig,
    build_far_model,
    load_far_model,
    masks_for_images,
    save_far_model,
    scale_mask_bank,
)
from .segmenter import (
    SegmenterConfig,
    SegmenterModel,
    binarize,
    build_segmenter,
    load_segmenter,
    predict_masks_batch,
    save_segmenter,
    segmentation_loss,
)

STAGES = ("global", "group", "joint")
_STAGE_PREREQ = {"global": None, "group": "global", "joint": "group"}


class StageError(RuntimeError):
    """A training stage was started without its prerequisite checkpoint."""


def derive_seed(*parts) -> int:
    h = hashlib.blake2b(repr(parts).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little") % (2 ** 31)


def write_manifest(out_dir: Path, paths) -> Path:
    entries = {}
    for p in sorted(Path(q) for q in paths):
        entries[p.name] = hashlib.sha256(p.read_bytes()).hexdigest()
    manifest = out_dir / "manifest.json"
    manifest.write_text(json.dumps({"artifacts": entries}, indent=2) + "\n")
    return manifest


def _echo_config(cfg: RunConfig, out_dir: Path) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg_path = out_dir / "config.txt"
    cfg.echo(cfg_path)
    seed_path = out_dir / "seed.txt"
    seed_path.write_text(f"{cfg.seed}\n")
    return [cfg_path, seed_path]


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------

def _stack_images(records) -> torch.Tensor:
    arr = np.stack([r.image.transpose(2, 0, 1) for r in records])
    return torch.from_numpy(np.ascontiguousarray(arr)).float()


def iter_batches(dataset: FaceDataset, batch: int, cfg: RunConfig,
                 epoch: int | None = None, train: bool = False,
                 with_gt_masks: bool = False):
    """Yield batches as dicts of tensors plus the source dataset indices.

    Training epochs shuffle with an (seed, epoch)-derived stream and, when
    augmentation is on, give each sample an (seed, epoch, index)-derived rng,
    so batch contents are independent of loader parallelism.
    """
    n = len(dataset)
    if train and epoch is not None:
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
    else:
        order = np.arange(n)
    aug_cfg = AugmentConfig(crop_to=cfg.data.image_size)
    mirror = load_mirror_table() if (train and cfg.data.augment) else None
    for start in range(0, n, batch):
        idx = order[start:start + batch]
        records = []
        for i in idx:
            rec = dataset[int(i)]
            if train and cfg.data.augment:
                rng = np.random.default_rng([cfg.seed, epoch or 0, int(i)])
                rec = augment(rec, rng, aug_cfg, mirror)
            else:
                rec = eval_transform(rec, cfg.data.image_size)
            records.append(rec)
        out = {
            "idx": idx,
            "ids": [r.id for r in records],
            "images": _stack_images(records),
            "labels": torch.from_numpy(np.stack([r.labels for r in records])),
        }
        if with_gt_masks:
            masks = np.stack([dataset.gt_masks_for(r) for r in records])
            out["gt_masks"] = torch.from_numpy(masks).float()
        yield out


# ---------------------------------------------------------------------------
# Segmenter
# ---------------------------------------------------------------------------

def evaluate_segmenter_f1(model: SegmenterModel, dataset: FaceDataset,
                          cfg: RunConfig, max_samples: int | None = None) -> np.ndarray:
    """Mean overlap F1 per group between thresholded predictions and ground truth."""
    threshold = cfg.seg.threshold
    limit = min(len(dataset), max_samples or len(dataset))
    sums = np.zeros(8)
    seen = 0
    model.eval()
    for batch in iter_batches(dataset, cfg.seg.batch, cfg, train=False, with_gt_masks=True):
        take = min(len(batch["idx"]), limit - seen)
        if take <= 0:
            break
        probs = predict_masks_batch(model, batch["images"][:take]).numpy()
        preds = binarize(probs, threshold)
        gts = batch["gt_masks"][:take].numpy()
        for p, g in zip(preds, gts):
            sums += [mask_f1(pj, gj) for pj, gj in zip(p, g)]
        seen += take
    return sums / max(seen, 1)


def train_segmenter_run(cfg: RunConfig, out_dir: str | Path,
                        resume: str | Path | None = None) -> dict:
    out_dir = Path(out_dir)
    artifacts = _echo_config(cfg, out_dir)

    train_ds = FaceDataset(cfg.data.root, "train", cfg.data.image_size,
                           mask_pad=cfg.data.mask_pad, hair_extend=cfg.data.hair_extend)
    val_ds = FaceDataset(cfg.data.root, "test", cfg.data.image_size,
                         mask_pad=cfg.data.mask_pad, hair_extend=cfg.data.hair_extend)

    scfg = SegmenterConfig(
        input_size=cfg.data.image_size, encoder_depth=cfg.seg.depth,
        base_channels=cfg.seg.base_channels, threshold=cfg.seg.threshold,
    )
    model = build_segmenter(scfg, cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.seg.lr,
                           betas=(cfg.optim.beta1, 0.999),
                           weight_decay=cfg.optim.weight_decay)
    start_epoch = 0
    history: list[dict] = []
    if resume is not None:
        arrays, _, _, meta = load_checkpoint(resume, SEG_MAGIC)
        model_keys = set(model.state_dict().keys())
        load_state_arrays(model, {k: v for k, v in arrays.items() if k in model_keys})
        opt_arrays = {k: v for k, v in arrays.items() if k.startswith("opt/")}
        if opt_arrays:
            load_optimizer_arrays(opt, opt_arrays, meta["optimizer"])
        start_epoch = meta.get("epochs_trained", 0)
        history = meta.get("history", [])

    for epoch in range(start_epoch, cfg.seg.epochs):
        torch.manual_seed(derive_seed(cfg.seed, "seg", epoch))
        model.train()
        losses = []
        t0 = time.time()
        for batch in iter_batches(train_ds, cfg.seg.batch, cfg, epoch=epoch,
                                  train=True, with_gt_masks=True):
            opt.zero_grad()
            loss = segmentation_loss(model(batch["images"]), batch["gt_masks"])
            loss.backward()
            opt.step()
            losses.append(float(loss))
        f1 = evaluate_segmenter_f1(model, val_ds, cfg, cfg.seg.val_samples)
        history.append({
            "epoch": epoch,
            "train_loss": float(np.mean(losses)),
            "f1_per_group": [float(v) for v in f1],
            "mean_f1": float(f1.mean()),
            "seconds": round(time.time() - t0, 2),
        })

    ckpt = out_dir / "segmenter.ckpt"
    opt_arrs, opt_meta = optimizer_arrays(opt)
    arrays = state_arrays(model)
    arrays.update(opt_arrs)
    from .checkpoint import save_checkpoint
    from dataclasses import asdict

    save_checkpoint(ckpt, SEG_MAGIC, arrays, asdict(scfg), cfg.seed,
                    meta={"epochs_trained": cfg.seg.epochs, "history": history,
                          "optimizer": opt_meta})
    log_path = out_dir / "seg_f1_log.json"
    log_path.write_text(json.dumps({"per_epoch": history}, indent=2) + "\n")
    artifacts += [ckpt, log_path]
    write_manifest(out_dir, artifacts)
    return {"checkpoint": ckpt, "history": history,
            "final_mean_f1": history[-1]["mean_f1"] if history else None}


# ---------------------------------------------------------------------------
# Mask banks
# ---------------------------------------------------------------------------

def build_mask_bank(segmenter: SegmenterModel, dataset: FaceDataset,
                    cfg: RunConfig, grouping: AttributeGrouping | None = None) -> MaskBank:
    grouping = grouping or load_grouping()
    chunks = {"m14": [], "m7": [], "rects": []}
    fallbacks = 0
    for batch in iter_batches(dataset, cfg.seg.batch, cfg, train=False):
        m14, m7, rects, fb = masks_for_images(
            segmenter, batch["images"], grouping,
            threshold=cfg.model.mask_threshold, mask_mode=cfg.model.mask_mode,
        )
        chunks["m14"].append(m14)
        chunks["m7"].append(m7)
        chunks["rects"].append(rects)
        fallbacks += fb
    return MaskBank(
        m14=np.concatenate(chunks["m14"]),
        m7=np.concatenate(chunks["m7"]),
        rects=np.concatenate(chunks["rects"]),
        fallbacks=fallbacks,
    )


# ---------------------------------------------------------------------------
# Recognition training
# ---------------------------------------------------------------------------

def _model_config(cfg: RunConfig) -> ModelConfig:
    return ModelConfig(
        backbone=BackboneConfig(stage_channels=cfg.model.channels,
                                blocks_per_stage=cfg.model.blocks,
                                input_size=cfg.data.image_size),
        attention=cfg.model.attention,
        feature_set=cfg.model.feature_set,
        head_hidden=cfg.model.head_hidden,
        dropout=cfg.model.dropout,
        mask_mode=cfg.model.mask_mode,
        mask_threshold=cfg.model.mask_threshold,
        mean=cfg.model.mean,
        std=cfg.model.std,
    )


def _loss_fn(cfg: RunConfig, extra_arrays: dict | None = None) -> AttributeLoss:
    loss = AttributeLoss(LossConfig(kind=cfg.loss.kind, gamma_b=cfg.loss.gamma_b,
                                    gamma_v=cfg.loss.gamma_v, momentum=cfg.loss.momentum))
    if extra_arrays and "efl/g" in extra_arrays:
        from dataclasses import replace

        loss.state = replace(loss.state, g=extra_arrays["efl/g"])
    return loss


def _batch_masks(segmenter, batch, cfg, grouping, bank: MaskBank | None):
    if bank is not None:
        return bank.tensors(batch["idx"])
    m14, m7, _, _ = masks_for_images(
        segmenter, batch["images"], grouping,
        threshold=cfg.model.mask_threshold, mask_mode=cfg.model.mask_mode,
    )
    return torch.from_numpy(m14), torch.from_numpy(m7)


def train_far_stage_run(cfg: RunConfig, stage: str, out_dir: str | Path,
                        seg_ckpt: str | Path | None = None,
                        init_ckpt: str | Path | None = None) -> dict:
    """One phase of the staged schedule; enforces global -> group -> joint order."""
    if stage not in STAGES:
        raise ValueError(f"stage must be one of {STAGES}")
    out_dir = Path(out_dir)
    artifacts = _echo_config(cfg, out_dir)
    grouping = load_grouping()
    train_ds = FaceDataset(cfg.data.root, "train", cfg.data.image_size)

    extra = {}
    if stage == "global":
        model = build_far_model(_model_config(cfg), grouping, cfg.seed)
        epochs = cfg.train.epochs_global
    else:
        if init_ckpt is None:
            raise StageError(
                f"stage {stage!r} requires the {_STAGE_PREREQ[stage]!r} checkpoint (--init)"
            )
        model, _, meta, extra = load_far_model(init_ckpt, grouping)
        prev = meta.get("stage")
        if prev != _STAGE_PREREQ[stage]:
            raise StageError(
                f"stage {stage!r} must start from a {_STAGE_PREREQ[stage]!r} "
                f"checkpoint, got {prev!r}"
            )
        epochs = cfg.train.epochs_group if stage == "group" else cfg.train.epochs_joint

    segmenter = None
    seg_hash_before = None
    if stage != "global":
        if seg_ckpt is None:
            raise StageError(f"stage {stage!r} requires a segmenter checkpoint (--seg)")
        segmenter, _, _ = load_segmenter(seg_ckpt)
        for p in segmenter.parameters():
            p.requires_grad_(False)
        seg_hash_before = parameter_hash(segmenter)

    if stage == "global":
        trainable = list(model.backbone.parameters()) + list(model.global_head.parameters())
    elif stage == "group":
        for p in model.backbone.parameters():
            p.requires_grad_(False)
        trainable = list(model.fusion.parameters()) + list(model.group_heads.parameters())
    else:
        for p in model.backbone.parameters():
            p.requires_grad_(True)
        trainable = [p for p in model.parameters() if p.requires_grad]

    opt = torch.optim.Adam(trainable, lr=cfg.optim.lr,
                           betas=(cfg.optim.beta1, 0.999),
                           weight_decay=cfg.optim.weight_decay)
    loss_fn = _loss_fn(cfg, extra)

    bank = None
    if stage != "global" and not cfg.data.augment:
        bank = build_mask_bank(segmenter, train_ds, cfg, grouping)

    mode = "global" if stage == "global" else "group"
    history = []
    for epoch in range(epochs):
        torch.manual_seed(derive_seed(cfg.seed, stage, epoch))
        model.train()
        losses = []
        t0 = time.time()
        for batch in iter_batches(train_ds, cfg.data.batch, cfg, epoch=epoch, train=True):
            if mode == "group":
                m14, m7 = _batch_masks(segmenter, batch, cfg, grouping, bank)
                logits = model(batch["images"], m14, m7, mode="group")
            else:
                logits = model(batch["images"], mode="global")
            opt.zero_grad()
            loss = loss_fn(logits, batch["labels"], training=True)
            loss.backward()
            opt.step()
            losses.append(float(loss))
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)),
                        "seconds": round(time.time() - t0, 2)})

    meta = {"stage": stage, "epochs": epochs, "history": history}
    if segmenter is not None:
        seg_hash_after = parameter_hash(segmenter)
        meta["seg_hash_before"] = seg_hash_before
        meta["seg_hash_after"] = seg_hash_after
        meta["mask_fallbacks"] = bank.fallbacks if bank is not None else None

    ckpt = out_dir / f"far_{stage}.ckpt"
    save_far_model(ckpt, model, cfg.seed, meta=meta,
                   extra_arrays={"efl/g": loss_fn.state.g})
    log_path = out_dir / f"train_log_{stage}.json"
    log_path.write_text(json.dumps(meta, indent=2) + "\n")
    artifacts += [ckpt, log_path]
    write_manifest(out_dir, artifacts)
    return {"checkpoint": ckpt, "meta": meta, "model": model}


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def evaluate_far(model: FarModel, dataset: FaceDataset, cfg: RunConfig,
                 segmenter: SegmenterModel | None = None,
                 bank: MaskBank | None = None, mode: str = "group",
                 ratio: float = 1.0, attr_subset=None) -> dict:
    """Deterministic metrics for one checkpoint on one split (no augmentation)."""
    grouping = model.grouping
    model.eval()
    if mode == "group":
        if bank is None:
            if segmenter is None:
                raise ValueError("group-mode evaluation needs a segmenter or mask bank")
            bank = build_mask_bank(segmenter, dataset, cfg, grouping)
        bank = scale_mask_bank(bank, ratio)
    counts = None
    with torch.no_grad():
        for batch in iter_batches(dataset, cfg.data.batch, cfg, train=False):
            if mode == "group":
                m14, m7 = bank.tensors(batch["idx"])
                logits = model(batch["images"], m14, m7, mode="group")
            else:
                logits = model(batch["images"], mode="global")
            probs = torch.sigmoid(logits).numpy()
            c = count_predictions(probs, batch["labels"].numpy(), threshold=0.5)
            counts = c if counts is None else counts.merge(c)
    return metrics_report(counts, grouping, attr_subset=attr_subset)


def pmr_table(model: FarModel, dataset: FaceDataset, cfg: RunConfig,
              segmenter: SegmenterModel, ratios=(0.64, 0.81, 1.0, 1.21, 1.44),
              attr_subset=None) -> list[dict]:
    """Accuracy/mA under rescaled predicted mask regions, one row per ratio."""
    bank = build_mask_bank(segmenter, dataset, cfg, model.grouping)
    rows = []
    for ratio in ratios:
        report = evaluate_far(model, dataset, cfg, bank=bank, mode="group",
                              ratio=ratio, attr_subset=attr_subset)
        rows.append({"ratio": ratio, "accuracy": report["accuracy"], "mA": report["mA"]})
    return rows
