"""Run configuration: a flat ``key = value`` text format with dotted sections.

Optimizer defaults follow the full-scale recipe (Adam, lr 1e-4, beta1 0.9,
weight decay 5e-4, batch 36); the bundled desk-scale config files override
them for CPU-sized runs. Every command echoes its effective config and seed
next to its outputs.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

from .synthetic import DEFAULT_ACTIVE


@dataclass
class DataSection:
    root: str = ""
    batch: int = 36
    workers: int = 0
    augment: bool = False
    image_size: int = 227
    mask_pad: float = 0.02
    hair_extend: float = 0.5


@dataclass
class SynthSection:
    n: int = 2000
    noise: float = 0.02
    attributes: tuple[str, ...] = DEFAULT_ACTIVE
    test_fraction: float = 0.2
    export_masks: bool = False


@dataclass
class SegSection:
    base_channels: int = 8
    depth: int = 4
    threshold: float = 0.5
    epochs: int = 3
    lr: float = 2e-3
    batch: int = 16
    val_samples: int = 400


@dataclass
class ModelSection:
    channels: tuple[int, int, int] = (64, 128, 256)
    blocks: tuple[int, int, int] = (1, 1, 1)
    attention: str = "ca"
    feature_set: str = "full"
    head_hidden: int = 64
    dropout: float = 0.5
    mask_mode: str = "soft"
    mask_threshold: float = 0.5
    mean: tuple[float, float, float] = (0.5, 0.5, 0.5)
    std: tuple[float, float, float] = (0.25, 0.25, 0.25)


@dataclass
class LossSection:
    kind: str = "efl"
    gamma_b: float = 2.0
    gamma_v: float = 2.0
    momentum: float = 0.99


@dataclass
class OptimSection:
    lr: float = 1e-4
    beta1: float = 0.9
    weight_decay: float = 5e-4


@dataclass
class TrainSection:
    epochs_global: int = 3
    epochs_group: int = 2
    epochs_joint: int = 8


@dataclass
class EvalSection:
    split: str = "test"
    active_only: bool = False
    ratios: tuple[float, ...] = (0.64, 0.81, 1.0, 1.21, 1.44)


@dataclass
class RunConfig:
    seed: int = 7
    out: str = "runs/out"
    data: DataSection = field(default_factory=DataSection)
    synth: SynthSection = field(default_factory=SynthSection)
    seg: SegSection = field(default_factory=SegSection)
    model: ModelSection = field(default_factory=ModelSection)
    loss: LossSection = field(default_factory=LossSection)
    optim: OptimSection = field(default_factory=OptimSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)

    # ------------------------------------------------------------------
    @classmethod
    def load(cls, path: str | Path | None = None, overrides=()) -> "RunConfig":
        cfg = cls()
        if path is not None:
            for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected 'key = value'")
                key, _, val = line.partition("=")
                cfg.set(key.strip(), val.strip())
        for item in overrides:
            if "=" not in item:
                raise ValueError(f"override must be key=value, got {item!r}")
            key, _, val = item.partition("=")
            cfg.set(key.strip(), val.strip())
        return cfg

    def set(self, dotted_key: str, raw_value: str) -> None:
        obj = self
        parts = dotted_key.split(".")
        for part in parts[:-1]:
            if not hasattr(obj, part):
                raise KeyError(f"unknown config section {part!r} in {dotted_key!r}")
            obj = getattr(obj, part)
        name = parts[-1]
        spec = {f.name: f for f in fields(obj)}
        if name not in spec:
            raise KeyError(f"unknown config key {dotted_key!r}")
        setattr(obj, name, _parse_value(raw_value, getattr(obj, name)))

    def flat_items(self) -> list[tuple[str, str]]:
        items: list[tuple[str, str]] = []

        def walk(prefix: str, obj) -> None:
            for f in fields(obj):
                val = getattr(obj, f.name)
                key = f"{prefix}{f.name}"
                if dataclasses.is_dataclass(val):
                    walk(key + ".", val)
                else:
                    items.append((key, _format_value(val)))

        walk("", self)
        return items

    def echo(self, path: str | Path) -> None:
        lines = [f"{k} = {v}" for k, v in self.flat_items()]
        Path(path).write_text("\n".join(lines) + "\n")


def _parse_value(raw: str, current):
    if isinstance(current, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected boolean, got {raw!r}")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, tuple):
        tokens = [t.strip() for t in raw.split(",") if t.strip()]
        elem = current[0] if current else raw
        if isinstance(elem, bool):
            raise ValueError("boolean tuples unsupported")
        if isinstance(elem, int):
            return tuple(int(t) for t in tokens)
        if isinstance(elem, float):
            return tuple(float(t) for t in tokens)
        return tuple(tokens)
    return raw


def _format_value(val) -> str:
    if isinstance(val, tuple):
        return ",".join(str(v) for v in val)
    return str(val)
