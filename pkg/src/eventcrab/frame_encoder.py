"""Frame-branch encoder: a small pre-norm transformer over patches of stacked event frames.

It stands in for a large pretrained image encoder. Anything that maps a
batch of frame stacks to unit vectors can replace it; :class:`PrecomputedFrames`
serves rows of a FEAT file instead of computing them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import feat
from .autodiff import Module, Parameter, ShapeError, Tensor, ops
from .autodiff.nn import LayerNorm, Linear
from .events import ConfigError


@dataclass(frozen=True)
class FrameEncoderConfig:
    height: int = 32
    width: int = 32
    n_frames: int = 8
    channels: int = 3
    patch: int = 8
    dim: int = 64
    depth: int = 2
    heads: int = 4
    mlp_ratio: int = 2

    def validate(self):
        if self.dim % self.heads:
            raise ConfigError(f"width {self.dim} not divisible by {self.heads} heads")
        if min(self.patch, self.dim, self.n_frames) < 1 or self.depth < 0:
            raise ConfigError("frame encoder sizes must be positive")
        return self

    @property
    def n_patches(self) -> int:
        return math.ceil(self.height / self.patch) * math.ceil(self.width / self.patch)


class Attention(Module):
    def __init__(self, dim: int, heads: int, rng):
        self.qkv = Linear(dim, 3 * dim, rng)
        self.proj = Linear(dim, dim, rng)
        self.heads = heads

    def forward(self, x):
        B, L, D = x.shape
        h, dh = self.heads, D // self.heads
        qkv = ops.transpose(ops.reshape(self.qkv(x), (B, L, 3, h, dh)), (2, 0, 3, 1, 4))  # (3, B, h, L, dh)
        q, k, v = qkv[0], qkv[1], qkv[2]
        att = ops.softmax(ops.mul(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh)), axis=-1)
        out = ops.reshape(ops.transpose(ops.matmul(att, v), (0, 2, 1, 3)), (B, L, D))
        return self.proj(out)


class TransformerBlock(Module):
    def __init__(self, dim: int, heads: int, mlp_ratio: int, rng):
        self.norm1, self.norm2 = LayerNorm(dim), LayerNorm(dim)
        self.attn = Attention(dim, heads, rng)
        self.fc1 = Linear(dim, mlp_ratio * dim, rng)
        self.fc2 = Linear(mlp_ratio * dim, dim, rng)

    def forward(self, x):
        x = ops.add(x, self.attn(self.norm1(x)))
        return ops.add(x, self.fc2(ops.silu(self.fc1(self.norm2(x)))))


class FrameEncoder(Module):
    def __init__(self, cfg: FrameEncoderConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        fan_in = cfg.channels * cfg.patch * cfg.patch
        self.patch_proj = Linear(fan_in, cfg.dim, rng)
        self.pos = Parameter(rng.normal(0.0, 0.02, size=(cfg.n_patches, cfg.dim)))
        self.blocks = [TransformerBlock(cfg.dim, cfg.heads, cfg.mlp_ratio, rng) for _ in range(cfg.depth)]
        self.norm = LayerNorm(cfg.dim)
        self.head = Linear(cfg.dim, cfg.dim, rng)

    def patchify(self, frames):
        """(B, H, W, N_t, C) -> (B * N_t, L, C * P * P), zero-padding H and W up to the patch size."""
        cfg = self.cfg
        frames = ops.tensor(frames)
        if frames.ndim != 5 or frames.shape[3] != cfg.n_frames or frames.shape[4] != cfg.channels:
            raise ShapeError(
                f"encode_frames: expected (B, H, W, {cfg.n_frames}, {cfg.channels}), got {frames.shape}")
        B, H, W, N, C = frames.shape
        if (H, W) != (cfg.height, cfg.width):
            raise ShapeError(f"encode_frames: frames are {H}x{W}, encoder expects {cfg.height}x{cfg.width}")
        P = cfg.patch
        ph, pw = (-H) % P, (-W) % P
        if ph or pw:
            frames = ops.pad(frames, ((0, 0), (0, ph), (0, pw), (0, 0), (0, 0)))
        lh, lw = (H + ph) // P, (W + pw) // P
        x = ops.reshape(frames, (B, lh, P, lw, P, N, C))
        x = ops.transpose(x, (0, 5, 1, 3, 6, 2, 4))  # (B, N, lh, lw, C, P, P)
        return ops.reshape(x, (B * N, lh * lw, C * P * P))

    def pooled_patches(self, patches, pos):
        """(B * N_t, L, C*P*P) patch vectors and an (L, D) position table -> (B, D)."""
        x = ops.add(self.patch_proj(patches), pos)
        for blk in self.blocks:
            x = blk(x)
        per_frame = ops.mean(self.norm(x), axis=1)  # (B * N_t, D)
        return ops.mean(ops.reshape(per_frame, (-1, self.cfg.n_frames, self.cfg.dim)), axis=1)

    def pooled(self, frames):
        return self.pooled_patches(self.patchify(frames), self.pos)

    def forward(self, frames):
        return ops.l2_normalize(self.head(self.pooled(frames)), axis=-1)


def encode_frames(frames, model: FrameEncoder):
    """Unit-norm frame feature f_a for a (B, H, W, N_t, 3) batch of frame stacks."""
    return model(frames)


class PrecomputedFrames:
    """Frame features read from a FEAT file, one row per manifest entry."""

    def __init__(self, matrix: np.ndarray):
        self.matrix = np.asarray(matrix, dtype=np.float32)
        norms = np.linalg.norm(self.matrix, axis=1, keepdims=True)
        self.matrix = np.divide(self.matrix, norms, out=np.zeros_like(self.matrix), where=norms > 0)

    @classmethod
    def load(cls, path) -> PrecomputedFrames:
        return cls(feat.load(path))

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def rows(self, indices) -> Tensor:
        return Tensor(self.matrix[np.asarray(indices)])

    def parameters(self):
        return []
