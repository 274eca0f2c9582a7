"""Dataset ingestion, synthetic export, and training-time augmentation.

Attribute, landmark, and partition files follow the CelebA layout, and the
synthetic generator exports the identical formats, so one loader serves both.
Samples are read from disk lazily; only the current batch is resident.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
from PIL import Image

from .geometry import (
    NUM_KEYPOINTS,
    keypoints_to_group_rects,
    load_mirror_table,
    rasterize_group_rects,
    read_landmark_file,
    write_landmark_file,
)
from .grouping import CELEBA_ATTRIBUTES, AttributeGrouping, canonical_name, load_grouping
from .synthetic import SynthConfig, synth_generate

TRAIN, VAL, TEST = 0, 1, 2
SPLIT_NAMES = {"train": TRAIN, "val": VAL, "test": TEST}


# ---------------------------------------------------------------------------
# CelebA-format files
# ---------------------------------------------------------------------------

def read_attr_file(path: str | Path, grouping: AttributeGrouping | None = None):
    """Read a CelebA attribute file into (ids, labels in canonical column order).

    Layout: line 1 sample count, line 2 the 40 attribute names, then
    ``<filename> <40 values in {-1,+1}>``. Values are remapped -1 -> 0,
    +1 -> 1, and columns are reordered to the canonical CelebA order if the
    header permutes them.
    """
    grouping = grouping or load_grouping()
    lines = Path(path).read_text().splitlines()
    if len(lines) < 2:
        raise ValueError(f"{path}: truncated attribute file")
    try:
        count = int(lines[0].strip())
    except ValueError as exc:
        raise ValueError(f"{path}: first line must be the sample count") from exc
    header = lines[1].split()
    canon = [canonical_name(n) for n in CELEBA_ATTRIBUTES]
    got = [canonical_name(n) for n in header]
    if sorted(got) != sorted(canon):
        unknown = sorted(set(got) - set(canon))
        missing = sorted(set(canon) - set(got))
        raise ValueError(
            f"{path}: attribute header mismatch (unknown={unknown}, missing={missing})"
        )
    perm = [got.index(n) for n in canon]

    ids: list[str] = []
    rows: list[list[int]] = []
    for lineno, raw in enumerate(lines[2:], start=3):
        if not raw.strip():
            continue
        parts = raw.split()
        if len(parts) != 1 + len(canon):
            raise ValueError(f"{path}:{lineno}: expected filename + {len(canon)} values")
        vals = []
        for v in parts[1:]:
            if v not in ("-1", "1", "+1"):
                raise ValueError(f"{path}:{lineno}: label values must be -1 or +1, got {v!r}")
            vals.append(0 if v == "-1" else 1)
        ids.append(parts[0])
        rows.append([vals[p] for p in perm])
    labels = np.array(rows, dtype=np.int64).reshape(len(ids), len(canon))
    if count != len(ids):
        raise ValueError(f"{path}: header count {count} != {len(ids)} rows")
    return ids, labels


def write_attr_file(path: str | Path, ids, labels, names=CELEBA_ATTRIBUTES) -> None:
    labels = np.asarray(labels)
    lines = [str(len(ids)), " ".join(names)]
    for sid, row in zip(ids, labels):
        lines.append(sid + " " + " ".join("1" if v else "-1" for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_partition_file(path: str | Path) -> dict[str, int]:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        if not raw.strip():
            continue
        name, _, part = raw.partition(" ")
        try:
            val = int(part)
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: malformed partition value") from exc
        if val not in (TRAIN, VAL, TEST):
            raise ValueError(f"{path}:{lineno}: partition must be 0, 1 or 2")
        out[name] = val
    return out


def write_partition_file(path: str | Path, parts: dict[str, int]) -> None:
    Path(path).write_text(
        "\n".join(f"{name} {val}" for name, val in parts.items()) + "\n"
    )


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------

@dataclass
class SampleRecord:
    """One sample as handed to models: image in [0,1], 40 binary labels."""

    id: str
    image: np.ndarray                    # float32 (H, W, 3)
    labels: np.ndarray                   # int64 (40,)
    keypoints: np.ndarray | None = None  # float64 (98, 2), normalized
    gt_masks: np.ndarray | None = None   # uint8 (8, H, W)


class FaceDataset:
    """Lazy, index-addressable view over an on-disk CelebA-format directory."""

    def __init__(self, root: str | Path, split: str | None = None,
                 image_size: int = 227, grouping: AttributeGrouping | None = None,
                 mask_pad: float = 0.02, hair_extend: float = 0.5):
        self.root = Path(root)
        self.image_size = image_size
        self.grouping = grouping or load_grouping()
        self.mask_pad = mask_pad
        self.hair_extend = hair_extend

        ids, labels = read_attr_file(self.root / "attrs.txt", self.grouping)
        part_path = self.root / "partition.txt"
        if split is not None:
            if not part_path.exists():
                raise FileNotFoundError(f"{part_path} required to select split {split!r}")
            parts = read_partition_file(part_path)
            want = SPLIT_NAMES[split] if isinstance(split, str) else int(split)
            keep = [i for i, sid in enumerate(ids) if parts.get(sid) == want]
            ids = [ids[i] for i in keep]
            labels = labels[keep]
        self.ids = ids
        self.labels = labels

        lm_path = self.root / "landmarks.txt"
        self._landmarks_px = read_landmark_file(lm_path) if lm_path.exists() else None

        img_dir = self.root / "images"
        for sid in self.ids:
            if not (img_dir / sid).exists():
                raise FileNotFoundError(f"missing image file {img_dir / sid}")

    def __len__(self) -> int:
        return len(self.ids)

    def attribute_prevalence(self) -> np.ndarray:
        return self.labels.mean(axis=0)

    def __getitem__(self, i: int) -> SampleRecord:
        sid = self.ids[i]
        with Image.open(self.root / "images" / sid) as im:
            im = im.convert("RGB")
            w, h = im.size
            img = np.asarray(im, dtype=np.float32) / 255.0
        kps = None
        if self._landmarks_px is not None:
            raw = self._landmarks_px.get(sid)
            if raw is not None:
                kps = raw / np.array([w, h], dtype=np.float64)
                kps = np.clip(kps, 0.0, 1.0)
        return SampleRecord(id=sid, image=img, labels=self.labels[i].copy(), keypoints=kps)

    def gt_masks_for(self, record: SampleRecord, size: int | None = None) -> np.ndarray:
        if record.keypoints is None:
            raise ValueError(f"sample {record.id} has no keypoints for mask ground truth")
        size = size or self.image_size
        rects = keypoints_to_group_rects(
            record.keypoints, pad=self.mask_pad, hair_extend=self.hair_extend,
            grouping=self.grouping,
        )
        return rasterize_group_rects(rects, size, size)


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AugmentConfig:
    resize_to: int = 256
    crop_to: int = 227
    rotate_prob: float = 0.35
    flip_prob: float = 0.35
    max_degrees: float = 15.0


def _resize(img: np.ndarray, size: int) -> np.ndarray:
    if img.shape[0] == size and img.shape[1] == size:
        return img
    return cv2.resize(img, (size, size), interpolation=cv2.INTER_LINEAR)


def eval_transform(record: SampleRecord, size: int = 227) -> SampleRecord:
    """Deterministic evaluation path: plain resize, no augmentation."""
    record.image = _resize(record.image, size)
    return record


def augment(record: SampleRecord, rng: np.random.Generator | None,
            cfg: AugmentConfig = AugmentConfig(),
            mirror_table: np.ndarray | None = None) -> SampleRecord:
    """Training augmentation: resize, optional rotate, random crop, optional flip.

    Keypoints ride along under the same affine maps; a horizontal flip also
    remaps landmark indices through the mirror table. Labels are untouched.
    With ``rng=None`` every random choice degenerates to the center/no-op path.
    """
    img = _resize(record.image, cfg.resize_to)
    kps = None if record.keypoints is None else record.keypoints.copy()
    n = cfg.resize_to

    if rng is not None and rng.random() < cfg.rotate_prob:
        angle = float(rng.uniform(-cfg.max_degrees, cfg.max_degrees))
        center = ((n - 1) / 2.0, (n - 1) / 2.0)
        mat = cv2.getRotationMatrix2D(center, angle, 1.0)
        img = cv2.warpAffine(img, mat, (n, n), flags=cv2.INTER_LINEAR,
                             borderMode=cv2.BORDER_REFLECT_101)
        if kps is not None:
            px = kps * n
            px = px @ mat[:, :2].T + mat[:, 2]
            kps = np.clip(px / n, 0.0, 1.0)

    margin = cfg.resize_to - cfg.crop_to
    if rng is not None:
        ox, oy = int(rng.integers(0, margin + 1)), int(rng.integers(0, margin + 1))
    else:
        ox = oy = margin // 2
    img = img[oy:oy + cfg.crop_to, ox:ox + cfg.crop_to]
    if kps is not None:
        px = kps * n - np.array([ox, oy], dtype=np.float64)
        kps = np.clip(px / cfg.crop_to, 0.0, 1.0)

    if rng is not None and rng.random() < cfg.flip_prob:
        img, kps = hflip(img, kps, mirror_table)

    record.image = np.ascontiguousarray(img)
    record.keypoints = kps
    return record


def hflip(img: np.ndarray, kps: np.ndarray | None,
          mirror_table: np.ndarray | None = None):
    """Mirror an image and its landmarks (x -> 1-x plus index remapping)."""
    out = img[:, ::-1].copy()
    if kps is None:
        return out, None
    table = mirror_table if mirror_table is not None else load_mirror_table()
    flipped = kps.copy()
    flipped[:, 0] = 1.0 - flipped[:, 0]
    return out, flipped[table]


# ---------------------------------------------------------------------------
# Synthetic dataset export
# ---------------------------------------------------------------------------

def write_synth_dataset(cfg: SynthConfig, out_dir: str | Path,
                        test_fraction: float = 0.2,
                        export_masks: bool = False) -> Path:
    """Generate and export a synthetic dataset in the CelebA-format layout.

    The last ``test_fraction`` of samples form the test split (generation is
    i.i.d., so the tail is an unbiased holdout). Landmarks are written in
    pixel coordinates, matching the real-data convention.
    """
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    samples = synth_generate(cfg)

    ids = [s.id for s in samples]
    labels = np.stack([s.labels for s in samples])
    write_attr_file(out_dir / "attrs.txt", ids, labels)

    n_test = max(1, int(round(test_fraction * len(samples)))) if len(samples) > 1 else 0
    parts = {s.id: (TEST if i >= len(samples) - n_test else TRAIN)
             for i, s in enumerate(samples)}
    write_partition_file(out_dir / "partition.txt", parts)

    size = cfg.image_size
    write_landmark_file(
        out_dir / "landmarks.txt",
        {s.id: s.keypoints * size for s in samples},
    )

    for s in samples:
        Image.fromarray(s.image).save(out_dir / "images" / s.id)
        if export_masks:
            from .geometry import export_group_masks

            grouping = load_grouping()
            export_group_masks(
                s.gt_masks(size), grouping.group_names,
                out_dir / "masks", Path(s.id).stem,
            )

    meta = {
        "seed": cfg.seed,
        "n_samples": cfg.n_samples,
        "active_attributes": list(cfg.active_attributes),
        "noise": cfg.noise,
        "image_size": cfg.image_size,
    }
    import json

    (out_dir / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    return out_dir
