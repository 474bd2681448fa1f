"""Run configuration: one JSON document with a section per component."""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field

from .events import ConfigError, SynthConfig
from .frame_encoder import FrameEncoderConfig
from .head import HeadConfig
from .point_encoder import PointEncoderConfig
from .sampler import SamplerConfig


@dataclass(frozen=True)
class TrainConfig:
    lr_init: float = 1e-5
    lr_min: float = 1e-6
    weight_decay: float = 2e-4
    epochs: int = 30
    batch_size: int = 16
    seed: int = 7
    precision: str = "f32"
    loss_on_fused: bool = True
    prompt_source: str = "fixed-random"
    prompt_file: str | None = None
    frame_features: str | None = None
    calibrate: bool = True
    eval_every: int = 1
    checkpoint_every: int = 0

    def validate(self):
        if self.lr_min > self.lr_init:
            raise ConfigError("lr_min must not exceed lr_init")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.precision not in ("f32", "f64"):
            raise ConfigError(f"unknown precision {self.precision!r}")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        return self


@dataclass(frozen=True)
class RunConfig:
    data: SynthConfig = field(default_factory=SynthConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    point: PointEncoderConfig = field(default_factory=PointEncoderConfig)
    frame: FrameEncoderConfig = field(default_factory=FrameEncoderConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self):
        self.data.validate()
        self.sampler.validate()
        self.point.validate()
        self.frame.validate()
        self.head.validate()
        self.train.validate()
        if self.point.n_slices != self.sampler.n_slices:
            raise ConfigError(f"point encoder expects {self.point.n_slices} slices, sampler makes "
                              f"{self.sampler.n_slices}")
        if (self.point.height, self.point.width) != tuple(self.sampler.context_hw):
            raise ConfigError("point encoder grid must match the sampler's context grid")
        if self.point.dim != self.frame.dim:
            raise ConfigError("point and frame features must have the same width")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> RunConfig:
        return _build(cls, doc, "")

    @classmethod
    def load(cls, path: str) -> RunConfig:
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def with_overrides(self, **sections) -> RunConfig:
        """Replace fields per section, e.g. ``with_overrides(train={"epochs": 3})``."""
        doc = self.to_dict()
        for sec, vals in sections.items():
            if sec not in doc:
                raise ConfigError(f"unknown config section {sec!r}")
            doc[sec].update(vals)
        return RunConfig.from_dict(doc)


def _build(cls, doc, where):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where or 'config'}: expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - names)
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown keys {unknown}")
    kwargs = {}
    for name, value in doc.items():
        hint = hints[name]
        path = f"{where}.{name}" if where else name
        if dataclasses.is_dataclass(hint):
            kwargs[name] = _build(hint, value, path)
        elif typing.get_origin(hint) is tuple:
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def benchmark_config(seed: int = 7, sampler_mode: str = "scl") -> RunConfig:
    """Synthetic benchmark setup: 8 classes, D = 64, 2 blocks, T' = 8."""
    return RunConfig(
        data=SynthConfig(num_classes=8, samples_per_class=100, seed=7),
        sampler=SamplerConfig(mode=sampler_mode, n_slices=8, n_bins=16, rho=0.04, alpha=0.5),
        point=PointEncoderConfig(dim=64, depth=2, n_slices=8),
        frame=FrameEncoderConfig(dim=64, n_frames=8),
        head=HeadConfig(tau=0.07, lam=0.8),
        train=TrainConfig(lr_init=2e-3, lr_min=1e-4, epochs=30, batch_size=16, seed=seed),
    ).validate()
