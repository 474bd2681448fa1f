"""The full recognizer (sampler, both encoders, prompt tables) and a cached dataset view."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Module, Tensor, ops
from .config import RunConfig
from .events import ConfigError, DatasetManifest, EventStream, MOTIFS, load_stream, stack_frames, synth_generate, synth_splits
from .frame_encoder import FrameEncoder, PrecomputedFrames
from .head import PromptEmbeddings, load_or_make_prompts, residual_fuse
from .point_encoder import PointEncoder, calibrate_spiking
from .sampler import SampleTrace, rasterize_bins, sample_batch


class EventDataset:
    """Labeled streams with split tags; frame stacks and micro-bin maps are cached per index."""

    def __init__(self, streams: list[EventStream], labels, splits, class_names, cfg: RunConfig):
        self.streams, self.labels = streams, np.asarray(labels, dtype=np.int64)
        self.splits, self.class_names, self.cfg = list(splits), list(class_names), cfg
        self._frames: dict[int, np.ndarray] = {}
        self._bins: dict[int, np.ndarray] = {}

    @classmethod
    def synthetic(cls, cfg: RunConfig) -> EventDataset:
        streams = synth_generate(cfg.data)
        return cls(streams, [s.label for s in streams], synth_splits(cfg.data),
                   list(MOTIFS[: cfg.data.num_classes]), cfg)

    @classmethod
    def from_manifest(cls, path: str, cfg: RunConfig) -> EventDataset:
        m = DatasetManifest.load(path)
        streams = [load_stream(m.resolve(p), label=lab) for p, lab in zip(m.paths, m.labels)]
        return cls(streams, m.labels, m.splits, m.class_names, cfg)

    def with_config(self, cfg: RunConfig) -> EventDataset:
        """Same samples under another config; caches are shared where their inputs agree."""
        view = EventDataset(self.streams, self.labels, self.splits, self.class_names, cfg)
        if cfg.frame == self.cfg.frame:
            view._frames = self._frames
        s, o = cfg.sampler, self.cfg.sampler
        if (s.n_bins, tuple(s.grid)) == (o.n_bins, tuple(o.grid)):
            view._bins = self._bins
        return view

    def __len__(self):
        return len(self.streams)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def indices(self, split: str) -> np.ndarray:
        return np.array([i for i, s in enumerate(self.splits) if s == split], dtype=np.int64)

    def frames(self, idx) -> np.ndarray:
        f = self.cfg.frame
        for i in idx:
            if i not in self._frames:
                self._frames[i] = stack_frames(self.streams[i], f.n_frames, f.height, f.width).frames
        return np.stack([self._frames[i] for i in idx])

    def bins(self, idx) -> np.ndarray:
        s = self.cfg.sampler
        for i in idx:
            if i not in self._bins:
                self._bins[i] = rasterize_bins(self.streams[i], s.n_bins, *s.grid).astype(np.float32)
        return np.stack([self._bins[i] for i in idx])


@dataclass
class Forward:
    frame: Tensor
    point: Tensor
    fused: Tensor
    traces: list[SampleTrace]


class EventClassifier(Module):
    def __init__(self, cfg: RunConfig, num_classes: int, rng: np.random.Generator | None = None,
                 prompts: PromptEmbeddings | None = None, frame_features: PrecomputedFrames | None = None):
        cfg.validate()
        rng = np.random.default_rng(cfg.train.seed) if rng is None else rng
        self.cfg = cfg
        self.cell = cfg.sampler.make_cell(rng)
        self.point = PointEncoder(cfg.point, rng)
        t = cfg.train
        if frame_features is None and t.frame_features:
            frame_features = PrecomputedFrames.load(t.frame_features)
        if frame_features is not None and frame_features.dim != cfg.point.dim:
            raise ConfigError(f"frame feature file has width {frame_features.dim}, model width is {cfg.point.dim}")
        self.frame_features = frame_features
        self.frame = None if frame_features is not None else FrameEncoder(cfg.frame, rng)
        self.prompts = prompts or load_or_make_prompts(t.prompt_source, num_classes, cfg.point.dim, t.seed,
                                                       t.prompt_file)

    def point_parameters(self) -> dict:
        """Parameters used only by the point branch (sampler cell and point encoder)."""
        return {k: p for k, p in self.param_dict().items() if k.startswith(("cell.", "point."))}

    def context(self, data: EventDataset, idx):
        streams = [data.streams[i] for i in idx]
        bins = data.bins(idx) if self.cfg.sampler.mode == "scl" else None
        return sample_batch(streams, self.cfg.sampler, self.cell, bins)

    def calibrate(self, data: EventDataset, idx):
        calibrate_spiking(self.point, self.context(data, idx).context)

    def forward(self, data: EventDataset, idx) -> Forward:
        batch = self.context(data, idx)
        fo = self.point(batch.context)
        if self.frame_features is not None:
            fa = self.frame_features.rows(idx)
        else:
            fa = self.frame(data.frames(idx))
        return Forward(fa, fo, residual_fuse(fa, fo), batch.traces)
