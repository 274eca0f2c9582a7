"""Rectangle geometry for group masks.

Converts 98-point landmark annotations into per-group rectangles (the ground
truth the segmenter is trained on), rasterizes rectangles into binary masks,
rescales mask regions for the robustness ablation, and scores mask overlap.

All rectangle coordinates are normalized to [0,1]^2 with x along image width
and y along height (y grows downward). Masks are (H, W) arrays indexed
``mask[row, col]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .grouping import AttributeGrouping, canonical_name, load_grouping

NUM_KEYPOINTS = 98

# Group rectangles are emitted in taxonomy order; these two are derived rather
# than bounded by landmarks.
HAIR_GROUP = "Hair"
OBJECT_GROUP = "Object"


def validate_keypoints(points) -> np.ndarray:
    """Check and normalize a (98, 2) keypoint array.

    Coordinates must be finite; values are clamped to [0,1].
    """
    arr = np.asarray(points, dtype=np.float64)
    if arr.shape != (NUM_KEYPOINTS, 2):
        raise ValueError(f"expected ({NUM_KEYPOINTS}, 2) keypoints, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("keypoints contain non-finite coordinates")
    return np.clip(arr, 0.0, 1.0)


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle in normalized coordinates, x0 <= x1 and y0 <= y1."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (self.x0 <= self.x1 and self.y0 <= self.y1):
            raise ValueError(f"degenerate rect ordering: {self}")

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))

    def clamped(self) -> "Rect":
        return Rect(
            min(max(self.x0, 0.0), 1.0),
            min(max(self.y0, 0.0), 1.0),
            min(max(self.x1, 0.0), 1.0),
            min(max(self.y1, 0.0), 1.0),
        )

    def as_array(self) -> np.ndarray:
        return np.array([self.x0, self.y0, self.x1, self.y1], dtype=np.float64)


def bounding_rect(points: np.ndarray, pad: float = 0.0) -> Rect:
    """Bounding box of a point set, expanded by ``pad`` per side, clamped to [0,1]^2."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] == 0 or pts.shape[1] != 2:
        raise ValueError("need a non-empty (N, 2) point array")
    return Rect(
        float(pts[:, 0].min()) - pad,
        float(pts[:, 1].min()) - pad,
        float(pts[:, 0].max()) + pad,
        float(pts[:, 1].max()) + pad,
    ).clamped()


def load_keypoint_groups(path: str | Path | None = None) -> dict[str, tuple[int, ...]]:
    """Load the landmark-index sets that bound each part group's rectangle.

    The file format is ``<group>: <comma-separated indices or a-b ranges>``.
    Hair and Object are intentionally absent (derived; see
    ``keypoints_to_group_rects``).
    """
    if path is None:
        text = resources.files("mgmtn.resources").joinpath("keypoint_groups.txt").read_text()
    else:
        text = Path(path).read_text()
    mapping: dict[str, tuple[int, ...]] = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        gname, _, rest = line.partition(":")
        indices: list[int] = []
        for token in rest.split(","):
            token = token.strip()
            if not token:
                continue
            if "-" in token:
                lo, hi = token.split("-")
                indices.extend(range(int(lo), int(hi) + 1))
            else:
                indices.append(int(token))
        if not indices:
            raise ValueError(f"empty keypoint assignment for group {gname!r}")
        if any(i < 0 or i >= NUM_KEYPOINTS for i in indices):
            raise ValueError(f"keypoint index out of range for group {gname!r}")
        mapping[canonical_name(gname)] = tuple(indices)
    return mapping


def keypoints_to_group_rects(
    keypoints,
    mapping: dict[str, tuple[int, ...]] | None = None,
    pad: float = 0.02,
    hair_extend: float = 0.5,
    grouping: AttributeGrouping | None = None,
) -> dict[str, Rect]:
    """Per-group rectangles from a 98-point annotation.

    Part rectangles are the padded bounding boxes of their assigned landmarks.
    The Object rectangle bounds all 98 points; the Hair rectangle is the Object
    rectangle extended upward by ``hair_extend`` times its height (hair has no
    landmarks). Everything is clamped to [0,1]^2. Returned in taxonomy group
    order.
    """
    kps = validate_keypoints(keypoints)
    if mapping is None:
        mapping = load_keypoint_groups()
    if grouping is None:
        grouping = load_grouping()

    obj = bounding_rect(kps, pad=pad)
    hair = Rect(obj.x0, obj.y0 - hair_extend * obj.height, obj.x1, obj.y1).clamped()

    rects: dict[str, Rect] = {}
    for name in grouping.group_names:
        if name == OBJECT_GROUP:
            rects[name] = obj
        elif name == HAIR_GROUP:
            rects[name] = hair
        else:
            if name not in mapping or not mapping[name]:
                raise ValueError(f"no keypoint assignment for part group {name!r}")
            rects[name] = bounding_rect(kps[list(mapping[name])], pad=pad)
    return rects


def rasterize(rect: Rect, h: int, w: int) -> np.ndarray:
    """Binary (h, w) mask: pixel is 1 iff its center lies inside the rectangle.

    Pixel (r, c) has center ((c + 0.5)/w, (r + 0.5)/h); containment is
    half-open, [x0, x1) x [y0, y1), so zero-area rectangles rasterize empty.
    """
    if h < 1 or w < 1:
        raise ValueError("mask dimensions must be >= 1")
    cx = (np.arange(w) + 0.5) / w
    cy = (np.arange(h) + 0.5) / h
    in_x = (cx >= rect.x0) & (cx < rect.x1)
    in_y = (cy >= rect.y0) & (cy < rect.y1)
    return (in_y[:, None] & in_x[None, :]).astype(np.uint8)


def rasterize_group_rects(rects: dict[str, Rect], h: int, w: int) -> np.ndarray:
    """Stack per-group rasterizations into an (8, h, w) mask set in dict order."""
    return np.stack([rasterize(r, h, w) for r in rects.values()])


def scale_rect(rect: Rect, area_ratio: float) -> Rect:
    """Scale a rectangle's area by ``area_ratio`` about its center.

    Both sides scale by sqrt(area_ratio); the result is clamped to [0,1]^2
    afterwards, so rectangles touching the border may realize a smaller ratio.
    A ratio of exactly 1.0 returns the input unchanged.
    """
    if not area_ratio > 0:
        raise ValueError(f"area ratio must be positive, got {area_ratio}")
    if area_ratio == 1.0:
        return rect
    s = float(np.sqrt(area_ratio))
    cx, cy = rect.center
    hw = 0.5 * rect.width * s
    hh = 0.5 * rect.height * s
    return Rect(cx - hw, cy - hh, cx + hw, cy + hh).clamped()


def rect_of_support(mask, threshold: float = 0.5) -> Rect | None:
    """Bounding rectangle of a mask's foreground (values >= threshold).

    Pixel extents are converted back to normalized coordinates using the
    half-open pixel-center convention, making ``rasterize(rect_of_support(m))``
    reproduce a rectangular mask exactly. Returns None for empty support.
    """
    m = np.asarray(mask)
    rows, cols = np.nonzero(m >= threshold)
    if rows.size == 0:
        return None
    h, w = m.shape
    return Rect(
        cols.min() / w,
        rows.min() / h,
        (cols.max() + 1.0) / w,
        (rows.max() + 1.0) / h,
    )


def mask_f1(pred, gt) -> float:
    """Overlap F1 between two binary masks: 2|a&b| / (|a| + |b|).

    Two empty masks score 1.0 by convention; empty vs non-empty scores 0.0.
    """
    a = np.asarray(pred)
    b = np.asarray(gt)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    a = a > 0.5
    b = b > 0.5
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


def load_mirror_table(path: str | Path | None = None) -> np.ndarray:
    """Index remapping applied to the 98 landmarks under horizontal flip."""
    if path is None:
        text = resources.files("mgmtn.resources").joinpath("wflw_mirror.txt").read_text()
    else:
        text = Path(path).read_text()
    table = np.array(
        [int(t) for t in text.split() if not t.startswith("#")], dtype=np.int64
    )
    if table.shape != (NUM_KEYPOINTS,):
        raise ValueError(f"mirror table must hold {NUM_KEYPOINTS} indices")
    if not np.array_equal(np.sort(table), np.arange(NUM_KEYPOINTS)):
        raise ValueError("mirror table is not a permutation")
    if not np.array_equal(table[table], np.arange(NUM_KEYPOINTS)):
        raise ValueError("mirror table is not an involution")
    return table


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

def read_landmark_file(path: str | Path) -> dict[str, np.ndarray]:
    """Parse ``<filename> <196 floats>`` lines into per-image (98, 2) arrays.

    Coordinates are returned as stored (pixels); callers normalize by the
    image size.
    """
    out: dict[str, np.ndarray] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 1 + 2 * NUM_KEYPOINTS:
            raise ValueError(
                f"{path}:{lineno}: expected filename + {2 * NUM_KEYPOINTS} numbers, "
                f"got {len(parts) - 1}"
            )
        try:
            vals = np.array([float(v) for v in parts[1:]], dtype=np.float64)
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: malformed number") from exc
        out[parts[0]] = vals.reshape(NUM_KEYPOINTS, 2)
    return out


def write_landmark_file(path: str | Path, landmarks: dict[str, np.ndarray]) -> None:
    lines = []
    for name, pts in landmarks.items():
        flat = " ".join(f"{v:.6f}" for v in np.asarray(pts).reshape(-1))
        lines.append(f"{name} {flat}")
    Path(path).write_text("\n".join(lines) + "\n")


def export_group_masks(masks: np.ndarray, group_names, out_dir: str | Path, stem: str) -> list[Path]:
    """Write one 8-bit single-channel PNG per group mask (255 = foreground)."""
    from PIL import Image

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for mask, name in zip(masks, group_names):
        img = Image.fromarray((np.asarray(mask) > 0.5).astype(np.uint8) * 255, mode="L")
        p = out_dir / f"{stem}_{name}.png"
        img.save(p)
        paths.append(p)
    return paths
