"""Fusion of the two branches, class prompt tables, contrastive losses, scoring and retrieval."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import feat
from .autodiff import Module, Parameter, ShapeError, Tensor, ops
from .events import ConfigError


def residual_fuse(frame_feat, point_feat, normalize: bool = True):
    """``f_a + f_a * f_o``, re-normalized to unit length by default."""
    fa, fo = ops.tensor(frame_feat), ops.tensor(point_feat)
    if fa.shape[-1] != fo.shape[-1]:
        raise ShapeError(f"residual_fuse: widths differ, {fa.shape} vs {fo.shape}")
    fused = ops.add(fa, ops.mul(fa, fo))
    return ops.l2_normalize(fused, axis=-1) if normalize else fused


@dataclass(frozen=True)
class HeadConfig:
    tau: float = 0.07
    lam: float = 0.8
    loss_variant: str = "label_conditioned"  # or printed_mean

    def validate(self):
        if not self.tau > 0:
            raise ConfigError("temperature must be positive")
        if self.lam < 0:
            raise ConfigError("point-loss weight must be >= 0")
        if self.loss_variant not in ("label_conditioned", "printed_mean"):
            raise ConfigError(f"unknown loss variant {self.loss_variant!r}")
        return self


def contrastive_loss(features, table, labels, tau: float = 0.07, variant: str = "label_conditioned"):
    """Mean over the batch of the feature-vs-prompt cross-entropy.

    ``features`` (B, D) and ``table`` (Q, D) are expected unit-norm. The
    ``printed_mean`` variant averages -log softmax over every class and so
    ignores the labels.
    """
    f, t = ops.tensor(features), ops.tensor(table)
    if f.ndim == 1:
        f = ops.reshape(f, (1, -1))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    Q = t.shape[0]
    if ((labels < 0) | (labels >= Q)).any():
        raise ConfigError(f"labels outside [0, {Q})")
    logp = ops.log_softmax(ops.mul(ops.matmul(f, ops.transpose(t, (1, 0))), 1.0 / tau), axis=-1)
    if variant == "label_conditioned":
        picked = logp[np.arange(len(labels)), labels]
        return ops.neg(ops.mean(picked))
    if variant == "printed_mean":
        return ops.neg(ops.mean(logp))
    raise ConfigError(f"unknown loss variant {variant!r}")


def total_loss(loss_frame, loss_point, lam: float):
    if lam < 0:
        raise ConfigError("point-loss weight must be >= 0")
    return ops.add(loss_frame, ops.mul(loss_point, lam))


def classify(fused, table) -> np.ndarray:
    """Class probabilities from plain dot products (no temperature)."""
    f = ops.tensor(fused).data
    t = ops.tensor(table).data
    z = f @ t.T
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def topk_hits(probs: np.ndarray, labels, k: int) -> np.ndarray:
    """Whether each label is among the k highest-probability classes (ties broken by class index)."""
    order = np.argsort(-probs, axis=-1, kind="stable")[:, :k]
    return (order == np.asarray(labels)[:, None]).any(axis=1)


@dataclass(frozen=True)
class RetrievalHit:
    index: int
    score: float


def retrieve(query, features, k: int) -> list[RetrievalHit]:
    """Top-k rows of ``features`` by dot product with ``query``, ties resolved by lower index."""
    q = np.asarray(query, dtype=np.float64)
    m = np.asarray(features, dtype=np.float64)
    if k <= 0 or len(m) == 0:
        return []
    scores = m @ q
    order = np.argsort(-scores, kind="stable")[: min(k, len(m))]
    return [RetrievalHit(int(i), float(scores[i])) for i in order]


def _unit_rows(m: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(m, axis=1, keepdims=True)
    return np.divide(m, n, out=np.zeros_like(m), where=n > 0)


class PromptEmbeddings(Module):
    """Frame- and point-side class tables, each (Q, D) with unit rows.

    Learnable tables are re-normalized on every read, so the unit-norm
    invariant holds throughout training.
    """

    def __init__(self, frame_table, point_table, source: str = "fixed-random", templates=None):
        if np.shape(frame_table) != np.shape(point_table):
            raise ConfigError("frame and point tables must have the same shape")
        self.source = source
        self.templates = templates or {"frame": "a frame of {}", "point": "points of {}"}
        if source == "learnable":
            self.frame_param = Parameter(_unit_rows(np.asarray(frame_table, dtype=np.float64)))
            self.point_param = Parameter(_unit_rows(np.asarray(point_table, dtype=np.float64)))
        else:
            self._frame = Tensor(_unit_rows(np.asarray(frame_table, dtype=np.float64)))
            self._point = Tensor(_unit_rows(np.asarray(point_table, dtype=np.float64)))

    @property
    def num_classes(self) -> int:
        return self.frame_table.shape[0]

    @property
    def frame_table(self) -> Tensor:
        if self.source == "learnable":
            return ops.l2_normalize(self.frame_param, axis=-1)
        return self._frame

    @property
    def point_table(self) -> Tensor:
        if self.source == "learnable":
            return ops.l2_normalize(self.point_param, axis=-1)
        return self._point

    def to_matrix(self) -> np.ndarray:
        """Both tables stacked, frame rows first, as written to a FEAT file."""
        return np.concatenate([self.frame_table.data, self.point_table.data])


def random_unit_rows(q: int, d: int, seed: int) -> np.ndarray:
    return _unit_rows(np.random.default_rng(seed).normal(size=(q, d)))


def load_or_make_prompts(source: str, num_classes: int, dim: int, seed: int = 0, path=None) -> PromptEmbeddings:
    """Build prompt tables from a FEAT file, a seeded random draw, or as learnable rows.

    A FEAT prompt file holds 2Q rows (frame table then point table) or Q rows
    shared by both sides.
    """
    if source == "file":
        m = feat.load(path)
        if m.shape[1] != dim or m.shape[0] not in (num_classes, 2 * num_classes):
            raise ConfigError(f"prompt file is {m.shape[0]}x{m.shape[1]}, expected {num_classes} or "
                              f"{2 * num_classes} rows of width {dim}")
        fa, fo = (m[:num_classes], m[num_classes:]) if m.shape[0] == 2 * num_classes else (m, m)
        return PromptEmbeddings(fa, fo, "file")
    if source in ("fixed-random", "learnable"):
        fa = random_unit_rows(num_classes, dim, seed)
        fo = random_unit_rows(num_classes, dim, seed + 1)
        return PromptEmbeddings(fa, fo, source)
    raise ConfigError(f"unknown prompt source {source!r}")
