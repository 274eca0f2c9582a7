"""Procedural schematic-face dataset with analytically known geometry.

Each sample is a cartoon face drawn from randomized geometry parameters. The
98 landmarks follow the WFLW index layout (contour 0-32, eyebrows 33-50, nose
51-59, eyes 60-75, mouth 76-95, pupils 96-97) and are placed *by construction*
on the drawn shapes: every part is rendered as a filled polygon whose vertices
are its own landmarks, so keypoint bounding boxes match pixel extents exactly.

A small set of attributes (one per taxonomy group by default) is realized by
deterministic geometric toggles, which makes recognition and segmentation
verifiable end to end at desk scale: ground-truth group masks derive from the
landmarks, and labels derive from the geometry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from PIL import Image, ImageDraw

from .geometry import keypoints_to_group_rects, rasterize_group_rects
from .grouping import CELEBA_ATTRIBUTES, AttributeGrouping, load_grouping

# One visually realized attribute per group (Mouth, Ear, LowerFace, Cheeks,
# Nose, Eyes, Hair, Object). Mustache ships as a ninth optional rule.
DEFAULT_ACTIVE = (
    "Mouth_Slightly_Open",
    "Wearing_Earrings",
    "Goatee",
    "Rosy_Cheeks",
    "Big_Nose",
    "Eyeglasses",
    "Wearing_Hat",
    "Smiling",
)

RULED_ATTRIBUTES = DEFAULT_ACTIVE + ("Mustache",)

# Geometric constants shared by rendering and landmark placement.
GLASSES_MARGIN = 0.012   # ring outer edge beyond the eye bbox; below rect pad
SMILE_LIFT = 0.018       # upward corner shift when Smiling
OPEN_GAP = 0.55          # inner-lip half-height ratio when mouth is open
CLOSED_GAP = 0.18
BIG_NOSE_SCALE = 1.55


@dataclass(frozen=True)
class SynthConfig:
    n_samples: int = 2000
    seed: int = 0
    active_attributes: tuple[str, ...] = DEFAULT_ACTIVE
    image_size: int = 227
    noise: float = 0.02


@dataclass(frozen=True)
class FaceParams:
    """Fully determines one face; labels toggle deterministic geometry."""

    # face ellipse
    fcx: float
    fcy: float
    fw: float
    fh: float
    # eyes / brows
    eye_dx: float
    eye_y: float
    eye_w: float
    eye_h: float
    brow_dy: float
    brow_w: float
    brow_arc: float
    brow_t: float
    # nose
    nose_top: float
    nose_bottom: float
    nose_w: float
    # mouth
    mouth_y: float
    mouth_w: float
    mouth_h: float
    # ears / hair / hat
    ear_r: float
    hair_t: float
    hat_h: float
    # colors
    skin: tuple[float, float, float]
    hair_color: tuple[float, float, float]
    lip: tuple[float, float, float]
    hat_color: tuple[float, float, float]
    # label-driven toggles
    flags: dict = field(default_factory=dict)

    def flag(self, name: str) -> bool:
        return bool(self.flags.get(name, 0))

    @property
    def smile(self) -> float:
        return SMILE_LIFT if self.flag("Smiling") else 0.0

    @property
    def gap_ratio(self) -> float:
        return OPEN_GAP if self.flag("Mouth_Slightly_Open") else CLOSED_GAP

    @property
    def nose_half_w(self) -> float:
        return self.nose_w * (BIG_NOSE_SCALE if self.flag("Big_Nose") else 1.0)

    @property
    def nose_low(self) -> float:
        return self.nose_bottom + (0.02 if self.flag("Big_Nose") else 0.0)


def _rng(seed: int, index: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, index, stream])


def sample_labels(cfg: SynthConfig, index: int) -> np.ndarray:
    """40-vector of binary labels; only active attributes vary (Bernoulli 1/2)."""
    rng = _rng(cfg.seed, index, 1)
    labels = np.zeros(len(CELEBA_ATTRIBUTES), dtype=np.int64)
    name_to_idx = {n: i for i, n in enumerate(CELEBA_ATTRIBUTES)}
    for attr in cfg.active_attributes:
        if attr not in RULED_ATTRIBUTES:
            raise ValueError(f"no geometric rule for attribute {attr!r}")
        labels[name_to_idx[attr]] = int(rng.integers(0, 2))
    return labels


def sample_params(cfg: SynthConfig, index: int, labels: np.ndarray) -> FaceParams:
    """Draw geometry; random draws never depend on labels, so label twins share geometry."""
    rng = _rng(cfg.seed, index, 0)
    u = rng.uniform

    fcx = u(0.47, 0.53)
    fcy = u(0.52, 0.58)
    fw = u(0.26, 0.32)
    fh = u(0.31, 0.36)

    eye_dx = u(0.38, 0.46) * fw
    eye_y = fcy - u(0.22, 0.30) * fh
    eye_w = u(0.14, 0.18) * fw
    eye_h = u(0.50, 0.65) * eye_w
    brow_dy = u(0.055, 0.075)
    brow_w = eye_w + u(0.015, 0.025)
    brow_arc = u(0.008, 0.018)
    brow_t = u(0.008, 0.014)

    nose_top = eye_y + u(0.02, 0.035)
    nose_bottom = fcy + u(0.10, 0.18) * fh
    nose_w = u(0.10, 0.14) * fw

    mouth_y = fcy + u(0.48, 0.58) * fh
    mouth_w = u(0.30, 0.38) * fw
    mouth_h = u(0.055, 0.085) * fh

    ear_r = u(0.055, 0.075) * fw
    hair_t = u(0.04, 0.07)
    hat_h = u(0.035, 0.05)

    skin = (u(0.80, 0.92), u(0.66, 0.78), u(0.56, 0.68))
    hair_color = (u(0.12, 0.35), u(0.08, 0.25), u(0.05, 0.18))
    lip = (u(0.68, 0.82), u(0.25, 0.38), u(0.28, 0.40))
    hat_color = (u(0.15, 0.45), u(0.2, 0.5), u(0.5, 0.85))

    flags = {
        name: int(labels[i]) for i, name in enumerate(CELEBA_ATTRIBUTES) if labels[i]
    }
    return FaceParams(
        fcx=fcx, fcy=fcy, fw=fw, fh=fh,
        eye_dx=eye_dx, eye_y=eye_y, eye_w=eye_w, eye_h=eye_h,
        brow_dy=brow_dy, brow_w=brow_w, brow_arc=brow_arc, brow_t=brow_t,
        nose_top=nose_top, nose_bottom=nose_bottom, nose_w=nose_w,
        mouth_y=mouth_y, mouth_w=mouth_w, mouth_h=mouth_h,
        ear_r=ear_r, hair_t=hair_t, hat_h=hat_h,
        skin=skin, hair_color=hair_color, lip=lip, hat_color=hat_color,
        flags=flags,
    )


# ---------------------------------------------------------------------------
# Landmarks
# ---------------------------------------------------------------------------

def _contour_angles() -> np.ndarray:
    # index 0 = left temple, 16 = chin, 32 = right temple; 10 degrees apart
    return np.deg2rad(90.0 + (16 - np.arange(33)) * 10.0)


def _mouth_outer(p: FaceParams) -> np.ndarray:
    ang = math.pi + np.arange(12) * (math.pi / 6.0)
    x = p.fcx + p.mouth_w * np.cos(ang)
    y = p.mouth_y + p.mouth_h * np.sin(ang) - p.smile * np.cos(ang) ** 2
    return np.stack([x, y], axis=1)


def _mouth_inner(p: FaceParams) -> np.ndarray:
    ang = math.pi + np.arange(8) * (math.pi / 4.0)
    x = p.fcx + 0.55 * p.mouth_w * np.cos(ang)
    y = (
        p.mouth_y
        + p.gap_ratio * p.mouth_h * np.sin(ang)
        - p.smile * (0.55 * np.cos(ang)) ** 2
    )
    return np.stack([x, y], axis=1)


def _eye_points(p: FaceParams, cx: float) -> np.ndarray:
    ang = math.pi + np.arange(8) * (math.pi / 4.0)
    return np.stack(
        [cx + p.eye_w * np.cos(ang), p.eye_y + p.eye_h * np.sin(ang)], axis=1
    )


def _brow_points(p: FaceParams, cx: float) -> np.ndarray:
    by = p.eye_y - p.brow_dy
    upper_t = np.arange(5) / 4.0
    ux = cx + p.brow_w * (2.0 * upper_t - 1.0)
    uy = by - p.brow_arc * np.sin(math.pi * upper_t)
    lower_u = np.array([7 / 8, 5 / 8, 3 / 8, 1 / 8])
    lx = cx + p.brow_w * (2.0 * lower_u - 1.0)
    ly = np.full(4, by + p.brow_t)
    return np.concatenate(
        [np.stack([ux, uy], axis=1), np.stack([lx, ly], axis=1)]
    )


def _nose_points(p: FaceParams) -> np.ndarray:
    pts = np.zeros((9, 2))
    lo = p.nose_low
    bridge_t = np.arange(4) / 3.0
    pts[0:4, 0] = p.fcx
    pts[0:4, 1] = p.nose_top + bridge_t * (lo - p.nose_top - 0.01)
    j = np.arange(5)
    pts[4:9, 0] = p.fcx + p.nose_half_w * (j / 2.0 - 1.0)
    pts[4:9, 1] = lo
    return pts


def face_keypoints(p: FaceParams) -> np.ndarray:
    """The 98 landmarks, in normalized [0,1]^2 coordinates."""
    kps = np.zeros((98, 2))
    ang = _contour_angles()
    kps[0:33, 0] = p.fcx + p.fw * np.cos(ang)
    kps[0:33, 1] = p.fcy + p.fh * np.sin(ang)
    lex, rex = p.fcx - p.eye_dx, p.fcx + p.eye_dx
    kps[33:42] = _brow_points(p, lex)
    kps[42:51] = _brow_points(p, rex)
    kps[51:60] = _nose_points(p)
    kps[60:68] = _eye_points(p, lex)
    kps[68:76] = _eye_points(p, rex)
    kps[76:88] = _mouth_outer(p)
    kps[88:96] = _mouth_inner(p)
    kps[96] = (lex, p.eye_y)
    kps[97] = (rex, p.eye_y)
    return kps


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def _c(rgb) -> tuple[int, int, int]:
    return tuple(int(round(255 * v)) for v in rgb)


def _poly(draw: ImageDraw.ImageDraw, pts: np.ndarray, size: int, fill) -> None:
    draw.polygon([(x * size, y * size) for x, y in pts], fill=_c(fill))


def _disk(draw, cx, cy, rx, ry, size, fill=None, outline=None, width=1) -> None:
    box = [(cx - rx) * size, (cy - ry) * size, (cx + rx) * size, (cy + ry) * size]
    draw.ellipse(
        box,
        fill=None if fill is None else _c(fill),
        outline=None if outline is None else _c(outline),
        width=width,
    )


def _rect(draw, x0, y0, x1, y1, size, fill) -> None:
    draw.rectangle([x0 * size, y0 * size, x1 * size, y1 * size], fill=_c(fill))


def render_face(p: FaceParams, size: int = 227, noise: float = 0.02,
                noise_rng: np.random.Generator | None = None) -> np.ndarray:
    """Rasterize a face; returns float32 (size, size, 3) in [0,1].

    Pass ``noise_rng=None`` with ``noise=0`` for the noiseless analytic image.
    Label twins rendered with the same rng state differ only where their
    geometric toggles differ.
    """
    img = Image.new("RGB", (size, size), _c((0.62, 0.64, 0.66)))
    draw = ImageDraw.Draw(img)
    kps = face_keypoints(p)
    lex, rex = p.fcx - p.eye_dx, p.fcx + p.eye_dx

    # hair: upper half-disk slightly larger than the face ellipse
    hw, hh = p.fw + p.hair_t, p.fh + p.hair_t
    arc = np.deg2rad(np.linspace(180.0, 360.0, 40))
    hair_pts = np.stack(
        [p.fcx + hw * np.cos(arc), p.fcy + hh * np.sin(arc)], axis=1
    )
    _poly(draw, hair_pts, size, p.hair_color)

    # ears sit on the upper contour; half gets covered by the face fill
    for idx in (2, 30):
        ex, ey = kps[idx]
        _disk(draw, ex, ey, p.ear_r, 1.3 * p.ear_r, size, fill=p.skin)

    # head: contour landmarks closed by the top arc of the ellipse
    top = np.deg2rad(np.linspace(250.0, 290.0, 12))[1:-1]
    head = np.concatenate(
        [kps[0:33][::-1], np.stack([p.fcx + p.fw * np.cos(top), p.fcy + p.fh * np.sin(top)], axis=1)]
    )
    _poly(draw, head, size, p.skin)

    if p.flag("Wearing_Hat"):
        top_y = p.fcy - p.fh - p.hair_t
        _rect(draw, p.fcx - 0.9 * p.fw, top_y - 0.004 - p.hat_h,
              p.fcx + 0.9 * p.fw, top_y - 0.004, size, p.hat_color)

    if p.flag("Rosy_Cheeks"):
        cy = p.fcy + 0.18 * p.fh
        for sx in (-1, 1):
            _disk(draw, p.fcx + sx * 0.50 * p.fw, cy, 0.030, 0.030, size,
                  fill=(0.90, 0.45, 0.45))

    # nose: filled fan through the tip and nostril-line landmarks
    nose_shadow = tuple(0.86 * v for v in p.skin)
    _poly(draw, kps[[51, 55, 56, 57, 58, 59]], size, nose_shadow)

    # brows
    brow_color = tuple(0.7 * v for v in p.hair_color)
    _poly(draw, kps[33:42], size, brow_color)
    _poly(draw, kps[42:51], size, brow_color)

    # eyes: sclera polygon through the 8 eye landmarks, pupil disk at center
    for pts, cx in ((kps[60:68], lex), (kps[68:76], rex)):
        _poly(draw, pts, size, (0.97, 0.97, 0.96))
        _disk(draw, cx, p.eye_y, 0.45 * p.eye_h, 0.45 * p.eye_h, size,
              fill=(0.10, 0.10, 0.13))

    # mouth: outer lips, inner band dark when open
    _poly(draw, kps[76:88], size, p.lip)
    inner = (0.16, 0.07, 0.08) if p.flag("Mouth_Slightly_Open") else tuple(0.8 * v for v in p.lip)
    _poly(draw, kps[88:96], size, inner)

    if p.flag("Mustache"):
        mtop = p.mouth_y - p.mouth_h  # smile never lowers the top edge
        _rect(draw, p.fcx - 1.05 * p.mouth_w, mtop - 0.014,
              p.fcx + 1.05 * p.mouth_w, mtop + 0.006, size,
              tuple(0.6 * v for v in p.hair_color))

    if p.flag("Goatee"):
        gy = p.fcy + 0.80 * p.fh
        _rect(draw, p.fcx - 0.030, gy - 0.022, p.fcx + 0.030, gy + 0.022, size,
              tuple(0.6 * v for v in p.hair_color))

    if p.flag("Eyeglasses"):
        dark = (0.08, 0.08, 0.10)
        rx, ry = p.eye_w + GLASSES_MARGIN, p.eye_h + GLASSES_MARGIN
        w = max(2, round(0.010 * size))
        _disk(draw, lex, p.eye_y, rx, ry, size, outline=dark, width=w)
        _disk(draw, rex, p.eye_y, rx, ry, size, outline=dark, width=w)
        _rect(draw, lex + rx, p.eye_y - 0.006, rex - rx, p.eye_y + 0.006, size, dark)

    if p.flag("Wearing_Earrings"):
        r = 0.012
        for idx in (2, 30):
            ex, ey = kps[idx]
            _disk(draw, ex, ey + 1.3 * p.ear_r + r, r, r, size, fill=(0.95, 0.85, 0.20))

    out = np.asarray(img, dtype=np.float32) / 255.0
    if noise > 0 and noise_rng is not None:
        out = out + noise_rng.normal(0.0, noise, out.shape).astype(np.float32)
        out = np.clip(out, 0.0, 1.0)
    return out


# ---------------------------------------------------------------------------
# Dataset assembly
# ---------------------------------------------------------------------------

@dataclass
class SynthSample:
    id: str
    image: np.ndarray        # uint8 (H, W, 3)
    labels: np.ndarray       # int64 (40,)
    keypoints: np.ndarray    # float64 (98, 2), normalized
    params: FaceParams

    def image_float(self) -> np.ndarray:
        return self.image.astype(np.float32) / 255.0

    def gt_masks(self, size: int = 227, pad: float = 0.02,
                 hair_extend: float = 0.5) -> np.ndarray:
        rects = keypoints_to_group_rects(self.keypoints, pad=pad, hair_extend=hair_extend)
        return rasterize_group_rects(rects, size, size)


def generate_sample(cfg: SynthConfig, index: int,
                    label_overrides: dict[str, int] | None = None) -> SynthSample:
    """One deterministic sample; overrides force attribute values after sampling."""
    labels = sample_labels(cfg, index)
    if label_overrides:
        name_to_idx = {n: i for i, n in enumerate(CELEBA_ATTRIBUTES)}
        for name, val in label_overrides.items():
            if name not in RULED_ATTRIBUTES:
                raise ValueError(f"no geometric rule for attribute {name!r}")
            labels[name_to_idx[name]] = int(val)
    params = sample_params(cfg, index, labels)
    img = render_face(params, size=cfg.image_size, noise=cfg.noise,
                      noise_rng=_rng(cfg.seed, index, 2))
    return SynthSample(
        id=f"synth_{index:05d}.png",
        image=np.round(img * 255.0).astype(np.uint8),
        labels=labels,
        keypoints=face_keypoints(params),
        params=params,
    )


def synth_generate(cfg: SynthConfig) -> list[SynthSample]:
    """The full dataset; bit-identical for identical configs."""
    if cfg.n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    return [generate_sample(cfg, i) for i in range(cfg.n_samples)]


def geometry_signal(sample: SynthSample, attr: str) -> float:
    """Scalar geometric quantity that deterministically encodes an attribute.

    Thresholding this value classifies the attribute perfectly on noiseless
    geometry, which is the separability guarantee the synthetic benchmark
    rests on.
    """
    p = sample.params
    signals = {
        "Mouth_Slightly_Open": p.gap_ratio,
        "Smiling": p.smile,
        "Big_Nose": p.nose_half_w / p.nose_w,
        "Eyeglasses": float(p.flag("Eyeglasses")),
        "Wearing_Hat": float(p.flag("Wearing_Hat")),
        "Wearing_Earrings": float(p.flag("Wearing_Earrings")),
        "Goatee": float(p.flag("Goatee")),
        "Rosy_Cheeks": float(p.flag("Rosy_Cheeks")),
        "Mustache": float(p.flag("Mustache")),
    }
    if attr not in signals:
        raise KeyError(f"no geometric rule for {attr!r}")
    return signals[attr]


def active_indices(cfg: SynthConfig, grouping: AttributeGrouping | None = None) -> list[int]:
    grouping = grouping or load_grouping()
    return sorted(grouping.attribute_index(a) for a in cfg.active_attributes)


def make_label_twins(cfg: SynthConfig, index: int, attr: str) -> tuple[SynthSample, SynthSample]:
    """Same face, same noise, attribute off/on. Pixel diffs isolate the attribute."""
    off = generate_sample(cfg, index, {attr: 0})
    on = generate_sample(cfg, index, {attr: 1})
    return off, on
