"""Drivers for the command-line experiments: eval, ablations, inspection."""

from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig
from .data import FaceDataset, eval_transform, write_synth_dataset
from .grouping import load_grouping
from .model import ModelConfig, build_far_model, load_far_model
from .segmenter import load_segmenter, predict_masks
from .selection import (
    apply_mask,
    argmax_inside_fraction,
    group_pool,
    prepare_group_masks,
    resize_mask,
    support_rects,
)
from .synthetic import SynthConfig
from .train import (
    _model_config,
    build_mask_bank,
    evaluate_far,
    pmr_table,
    train_far_stage_run,
    write_manifest,
    _echo_config,
)

GROUP_COLORS = (
    (230, 60, 60), (60, 160, 230), (60, 200, 120), (240, 180, 40),
    (180, 90, 220), (240, 120, 180), (90, 210, 220), (250, 250, 250),
)


def _active_subset(cfg: RunConfig, dataset: FaceDataset):
    """Indices of attributes that actually vary in the split, if requested."""
    if not cfg.eval.active_only:
        return None
    prevalence = dataset.attribute_prevalence()
    return [i for i, p in enumerate(prevalence) if 0.0 < p < 1.0]


def run_synth(cfg: RunConfig, out_dir: str | Path) -> dict:
    out_dir = Path(out_dir)
    scfg = SynthConfig(
        n_samples=cfg.synth.n, seed=cfg.seed,
        active_attributes=tuple(cfg.synth.attributes),
        image_size=cfg.data.image_size, noise=cfg.synth.noise,
    )
    write_synth_dataset(scfg, out_dir, test_fraction=cfg.synth.test_fraction,
                        export_masks=cfg.synth.export_masks)
    artifacts = _echo_config(cfg, out_dir)
    artifacts += [out_dir / "attrs.txt", out_dir / "landmarks.txt",
                  out_dir / "partition.txt", out_dir / "meta.json"]
    write_manifest(out_dir, artifacts)
    return {"out": out_dir, "n": cfg.synth.n}


def run_eval(cfg: RunConfig, ckpt: str | Path, out_dir: str | Path,
             seg_ckpt: str | Path | None = None, mode: str = "group") -> dict:
    out_dir = Path(out_dir)
    artifacts = _echo_config(cfg, out_dir)
    model, _, meta, _ = load_far_model(ckpt)
    dataset = FaceDataset(cfg.data.root, cfg.eval.split, cfg.data.image_size)
    segmenter = None
    if mode == "group":
        if seg_ckpt is None:
            raise ValueError("group-mode evaluation requires --seg")
        segmenter, _, _ = load_segmenter(seg_ckpt)
    report = evaluate_far(model, dataset, cfg, segmenter=segmenter, mode=mode,
                          attr_subset=_active_subset(cfg, dataset))
    report["checkpoint_stage"] = meta.get("stage")
    path = out_dir / "metrics.json"
    path.write_text(json.dumps(report, indent=2) + "\n")
    write_manifest(out_dir, artifacts + [path])
    return report


def _plot_rows(rows: list[dict], x_key: str, out_path: Path, title: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    xs = [str(r[x_key]) for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    for metric in ("accuracy", "mA"):
        ax.plot(xs, [r[metric] for r in rows], marker="o", label=metric)
    ax.set_xlabel(x_key)
    ax.set_ylabel("metric")
    ax.set_title(title)
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def _variant_model(base_ckpt, cfg: RunConfig, seed: int, attention: str | None = None,
                   feature_set: str | None = None):
    """Fresh fusion/heads for an ablation variant, backbone copied from a checkpoint."""
    source, _, meta, _ = load_far_model(base_ckpt)
    mcfg = _model_config(cfg)
    mcfg = replace(mcfg,
                   attention=attention if attention is not None else mcfg.attention,
                   feature_set=feature_set if feature_set is not None else mcfg.feature_set)
    model = build_far_model(mcfg, source.grouping, seed)
    model.backbone.load_state_dict(source.backbone.state_dict())
    model.global_head.load_state_dict(source.global_head.state_dict())
    return model, meta


def run_ablate(cfg: RunConfig, axis: str, out_dir: str | Path,
               ckpt: str | Path | None = None,
               seg_ckpt: str | Path | None = None,
               global_ckpt: str | Path | None = None) -> list[dict]:
    """One ablation axis; writes a table JSON and a plot.

    ``maskscale`` re-evaluates a trained checkpoint under rescaled mask
    regions. ``attention`` and ``features`` train the group/joint stages once
    per variant on top of a shared global-stage checkpoint.
    """
    out_dir = Path(out_dir)
    artifacts = _echo_config(cfg, out_dir)
    dataset = FaceDataset(cfg.data.root, cfg.eval.split, cfg.data.image_size)
    subset = _active_subset(cfg, dataset)

    if axis == "maskscale":
        if ckpt is None or seg_ckpt is None:
            raise ValueError("maskscale needs --ckpt and --seg")
        model, _, _, _ = load_far_model(ckpt)
        segmenter, _, _ = load_segmenter(seg_ckpt)
        rows = pmr_table(model, dataset, cfg, segmenter,
                         ratios=cfg.eval.ratios, attr_subset=subset)
        x_key, title = "ratio", "mask region scaling"
    elif axis in ("attention", "features"):
        if global_ckpt is None or seg_ckpt is None:
            raise ValueError(f"{axis} ablation needs --global-ckpt and --seg")
        variants = (("none", "ca", "sa", "ca-sa") if axis == "attention"
                    else ("gl", "gr4", "gr3gr4", "full"))
        rows = []
        for variant in variants:
            vcfg = RunConfig.load(None)
            for key, val in cfg.flat_items():
                vcfg.set(key, val)
            if axis == "attention":
                vcfg.set("model.attention", variant)
            else:
                vcfg.set("model.feature_set", variant)
            vdir = out_dir / f"variant_{variant.replace('-', '_')}"
            group = train_far_stage_run(vcfg, "group", vdir, seg_ckpt=seg_ckpt,
                                        init_ckpt=global_ckpt)
            joint = train_far_stage_run(vcfg, "joint", vdir, seg_ckpt=seg_ckpt,
                                        init_ckpt=group["checkpoint"])
            segmenter, _, _ = load_segmenter(seg_ckpt)
            report = evaluate_far(joint["model"], dataset, vcfg,
                                  segmenter=segmenter, attr_subset=subset)
            rows.append({"variant": variant, "accuracy": report["accuracy"],
                         "mA": report["mA"]})
        x_key, title = "variant", f"{axis} ablation"
    else:
        raise ValueError(f"unknown ablation axis {axis!r}")

    table = out_dir / f"{axis}.json"
    table.write_text(json.dumps({"axis": axis, "rows": rows}, indent=2) + "\n")
    plot = out_dir / f"{axis}.png"
    _plot_rows(rows, x_key, plot, title)
    write_manifest(out_dir, artifacts + [table, plot])
    return rows


def run_inspect(cfg: RunConfig, ckpt: str | Path, seg_ckpt: str | Path,
                out_dir: str | Path, num_samples: int = 4) -> dict:
    """Per-group max-pool argmax locations with mask overlays.

    For each sample and group: where each channel's maximum activation sits on
    the 14x14 selection grid, what fraction of those locations fall inside the
    predicted mask support, and an overlay of mask outlines plus argmax dots.
    """
    from PIL import Image, ImageDraw

    out_dir = Path(out_dir)
    artifacts = _echo_config(cfg, out_dir)
    grouping = load_grouping()
    model, _, _, _ = load_far_model(ckpt)
    segmenter, _, _ = load_segmenter(seg_ckpt)
    dataset = FaceDataset(cfg.data.root, cfg.eval.split, cfg.data.image_size)
    object_index = grouping.group_index("Object")

    results = []
    overlay_paths = []
    model.eval()
    for i in range(min(num_samples, len(dataset))):
        record = eval_transform(dataset[i], cfg.data.image_size)
        probs = predict_masks(segmenter, record.image)
        masks, _ = prepare_group_masks(probs, object_index,
                                       threshold=cfg.model.mask_threshold,
                                       binarize=True)
        with torch.no_grad():
            images = torch.from_numpy(record.image.transpose(2, 0, 1)[None]).float()
            pyramid = model.backbone(model.standardized(images))
            f3d = torch.nn.functional.avg_pool2d(pyramid.f3, 2)[0].numpy()

        unmasked_vals, unmasked_locs = group_pool(
            apply_mask(f3d, np.ones((14, 14)))
        )
        entry = {"id": record.id, "groups": [],
                 "unmasked_argmax": unmasked_locs.tolist()}
        img = Image.fromarray((record.image * 255).astype(np.uint8))
        draw = ImageDraw.Draw(img)
        size = record.image.shape[0]
        cell = size / 14.0
        for gi, gname in enumerate(grouping.group_names):
            m14 = resize_mask(masks[gi], (14, 14))
            masked = apply_mask(f3d, m14, group_index=gi)
            vals, locs = group_pool(masked)
            entry["groups"].append({
                "name": gname,
                "argmax": locs.tolist(),
                "inside_fraction": argmax_inside_fraction(masked),
                "max_activation": float(vals.max()),
            })
            rect = support_rects(masks[gi:gi + 1], cfg.model.mask_threshold)[0]
            color = GROUP_COLORS[gi % len(GROUP_COLORS)]
            if rect is not None:
                draw.rectangle([rect.x0 * size, rect.y0 * size,
                                rect.x1 * size, rect.y1 * size],
                               outline=color, width=2)
            for (r, c), v in zip(locs, vals):
                if v <= 0:
                    continue
                x, y = (c + 0.5) * cell, (r + 0.5) * cell
                draw.ellipse([x - 2, y - 2, x + 2, y + 2], fill=color)
        overlay = out_dir / f"overlay_{Path(record.id).stem}.png"
        img.save(overlay)
        overlay_paths.append(overlay)
        results.append(entry)

    path = out_dir / "activations.json"
    payload = {"samples": results, "group_names": list(grouping.group_names)}
    path.write_text(json.dumps(payload, indent=2) + "\n")
    write_manifest(out_dir, artifacts + [path] + overlay_paths)
    return payload
