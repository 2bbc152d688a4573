"""Experiment configuration, YAML round-tripping and named seed streams."""

from __future__ import annotations

import dataclasses
import typing
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from ..align import AnchorSpec
from ..data_synth import PhantomConfig
from ..distill import DistillConfig
from ..nets import NetConfig


@dataclass
class DatasetConfig:
    """Where samples come from.

    ``kind: synthetic`` generates ``n_train`` + ``n_test`` phantoms from
    ``phantom``; ``kind: directory`` ingests ``.vol`` files from ``train_dir``
    and ``test_dir``.
    """

    kind: str = "synthetic"
    phantom: PhantomConfig = field(default_factory=lambda: PhantomConfig(
        shape=(24, 24, 24), tumor_radius_range=(4.0, 8.0), noise_std=0.12, core_fraction=0.75, enhancing_fraction=0.5))
    n_train: int = 64
    n_test: int = 16
    train_dir: Optional[str] = None
    test_dir: Optional[str] = None


@dataclass
class OptimConfig:
    """Adam with an epoch-wise linear decay: ``lr_e = max(min_lr, lr - e * decay)``."""

    learning_rate: float = 1e-3
    lr_decay: float = 1e-5
    min_learning_rate: float = 1e-5
    batch_size: int = 4


@dataclass
class TrainConfig:
    n_modalities: int = 4
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    net: NetConfig = field(default_factory=NetConfig)
    anchor: AnchorSpec = field(default_factory=lambda: AnchorSpec(kind="adaptive", base_k=2))
    distill: DistillConfig = field(default_factory=DistillConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    teacher_epochs: int = 20
    student_epochs: int = 60
    crop: tuple[int, int, int] = (16, 16, 16)
    lambda_align: float = 1.0
    seg_loss: str = "dice_ce"
    seed: int = 0

    def validate(self) -> None:
        if self.optim.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.optim.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.teacher_epochs < 1 or self.student_epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.dataset.kind not in ("synthetic", "directory"):
            raise ValueError(f"unknown dataset kind {self.dataset.kind!r}")
        if self.dataset.kind == "synthetic" and self.dataset.phantom.n_modalities != self.n_modalities:
            raise ValueError("phantom.n_modalities must equal n_modalities")
        self.net.validate()
        self.anchor.validate(self.n_modalities)
        self.distill.validate()

    def with_seed(self, seed: int) -> "TrainConfig":
        """Copy with every seed stream, the phantom seed included, driven by ``seed``."""
        cfg = from_dict(TrainConfig, to_dict(self))
        cfg.seed = int(seed)
        cfg.dataset.phantom.seed = int(seed)
        return cfg

    def replace(self, **changes) -> "TrainConfig":
        cfg = from_dict(TrainConfig, to_dict(self))
        for k, v in changes.items():
            setattr(cfg, k, v)
        return cfg


def learning_rate_at(epoch: int, optim: OptimConfig) -> float:
    return max(optim.min_learning_rate, optim.learning_rate - epoch * optim.lr_decay)


def seed_for(config: TrainConfig, stream: str, *extra: int) -> int:
    """Stable 32-bit seed for a named stream; independent of call order."""
    ss = np.random.SeedSequence([config.seed, zlib.crc32(stream.encode()), *extra])
    return int(ss.generate_state(1)[0])


def rng_for(config: TrainConfig, stream: str, *extra: int) -> np.random.Generator:
    return np.random.default_rng(seed_for(config, stream, *extra))


# --- dict / YAML --------------------------------------------------------------


def to_dict(obj) -> dict:
    def fix(v):
        if isinstance(v, tuple):
            return [fix(x) for x in v]
        if isinstance(v, list):
            return [fix(x) for x in v]
        if isinstance(v, dict):
            return {k: fix(x) for k, x in v.items()}
        return v

    return fix(asdict(obj))


def from_dict(cls, data: dict):
    """Build dataclass ``cls`` from a (possibly partial) nested dict."""
    if data is None:
        return cls()
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        tp = hints[name]
        origin = typing.get_origin(tp)
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        target = args[0] if origin is typing.Union and len(args) == 1 else tp
        if dataclasses.is_dataclass(target) and isinstance(value, dict):
            value = from_dict(target, value)
        elif (typing.get_origin(target) is tuple or target is tuple) and value is not None:
            value = tuple(value)
        kwargs[name] = value
    return cls(**kwargs)


def load_config(path) -> TrainConfig:
    data = yaml.safe_load(Path(path).read_text()) or {}
    cfg = from_dict(TrainConfig, data)
    cfg.validate()
    return cfg


def dump_config(config: TrainConfig) -> str:
    return yaml.safe_dump(to_dict(config), sort_keys=False)
