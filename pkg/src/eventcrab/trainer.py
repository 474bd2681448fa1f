"""Training loop: Adam with decoupled weight decay, cosine schedule, metrics log, checkpoints."""

from __future__ import annotations

import json
import math
import os
import time
from contextlib import nullcontext
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .autodiff import backward, checkpoint, no_grad, precision
from .config import RunConfig, TrainConfig
from .head import classify, contrastive_loss, residual_fuse, topk_hits, total_loss
from .model import EventClassifier, EventDataset


class TrainingAbort(RuntimeError):
    pass


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr: float, wd: float = 0.0,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """In-place Adam update with bias correction; weight decay is applied first, decoupled."""
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise TrainingAbort(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    c1, c2 = 1.0 - beta1 ** t, 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name] = beta1 * state.m[name] + (1 - beta1) * g
        v = state.v[name] = beta2 * state.v[name] + (1 - beta2) * g * g
        data = p.data - lr * wd * p.data if wd else p.data
        p.data = (data - lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.data.dtype)
    return state


def cosine_lr(step: int, total_steps: int, cfg: TrainConfig) -> float:
    if total_steps <= 0 or step == 0:
        return cfg.lr_init
    if step == total_steps:
        return cfg.lr_min
    return cfg.lr_min + 0.5 * (cfg.lr_init - cfg.lr_min) * (1.0 + math.cos(math.pi * step / total_steps))


def batch_losses(model: EventClassifier, data: EventDataset, idx):
    """(total, frame-side, point-side) losses and the forward record for one batch."""
    cfg = model.cfg
    out = model.forward(data, idx)
    labels = data.labels[idx]
    table_a, table_o = model.prompts.frame_table, model.prompts.point_table
    # the frame-side loss sees the fused feature; the point feature enters it as a constant so that
    # the point branch learns only from its own weighted term
    fa_train = residual_fuse(out.frame, out.point.detach()) if cfg.train.loss_on_fused else out.frame
    la = contrastive_loss(fa_train, table_a, labels, cfg.head.tau, cfg.head.loss_variant)
    lo = contrastive_loss(out.point, table_o, labels, cfg.head.tau, cfg.head.loss_variant)
    return total_loss(la, lo, cfg.head.lam), la, lo, out


@dataclass
class EvalResult:
    top1: float
    top5: float
    per_class: list
    retained_fraction: float
    point_top1: float
    frame_top1: float
    probs: np.ndarray
    fused: np.ndarray

    def to_json(self) -> dict:
        return {"top1": self.top1, "top5": self.top5, "per_class": self.per_class,
                "retained_fraction": self.retained_fraction, "point_top1": self.point_top1,
                "frame_top1": self.frame_top1}


def evaluate(model: EventClassifier, data: EventDataset, split: str = "test", batch_size: int = 32) -> EvalResult:
    idx_all = data.indices(split)
    probs, p_point, p_frame, fused, retained = [], [], [], [], []
    with no_grad():
        for s in range(0, len(idx_all), batch_size):
            idx = idx_all[s:s + batch_size]
            out = model.forward(data, idx)
            probs.append(classify(out.fused, model.prompts.frame_table))
            p_point.append(classify(out.point, model.prompts.point_table))
            p_frame.append(classify(out.frame, model.prompts.frame_table))
            fused.append(out.fused.data)
            retained += [t.retained_fraction for t in out.traces]
    probs = np.concatenate(probs) if probs else np.zeros((0, data.num_classes))
    labels = data.labels[idx_all]
    hit1 = topk_hits(probs, labels, 1)
    per_class = [float(hit1[labels == q].mean()) if (labels == q).any() else None for q in range(data.num_classes)]
    acc = lambda p: float(topk_hits(np.concatenate(p), labels, 1).mean()) if p else 0.0  # noqa: E731
    return EvalResult(float(hit1.mean()) if len(hit1) else 0.0,
                      float(topk_hits(probs, labels, min(5, data.num_classes)).mean()) if len(hit1) else 0.0,
                      per_class, float(np.mean(retained)) if retained else 1.0, acc(p_point), acc(p_frame), probs,
                      np.concatenate(fused) if fused else np.zeros((0, model.cfg.point.dim)))


@dataclass
class TrainResult:
    model: EventClassifier
    history: list
    final: EvalResult
    seconds: float


def _single_thread(threads: int | None):
    return threadpool_limits(limits=threads) if threads else nullcontext()


def train(cfg: RunConfig, data: EventDataset | None = None, out_dir: str | None = None, threads: int | None = 1,
          log=None, model: EventClassifier | None = None) -> TrainResult:
    """Train from scratch (or continue ``model``) and return the model plus per-epoch metrics.

    With ``out_dir`` set, writes ``metrics.jsonl``, ``config.json`` and
    ``model.evck`` there. Everything is a function of ``cfg`` (seeded shuffles,
    init and prompt tables), and BLAS runs on ``threads`` threads.
    """
    cfg.validate()
    t = cfg.train
    with precision(t.precision), _single_thread(threads):
        start = time.perf_counter()
        data = data if data is not None else EventDataset.synthetic(cfg)
        train_idx = data.indices("train")
        if len(train_idx) == 0 or len(data.indices("test")) == 0:
            raise TrainingAbort("train and test splits must both be non-empty")
        rng = np.random.default_rng([t.seed, 1])
        if model is None:
            model = EventClassifier(cfg, data.num_classes, np.random.default_rng([t.seed, 0]))
            if t.calibrate:
                model.calibrate(data, train_idx[: max(t.batch_size, 32)])
        params = model.param_dict()
        steps_per_epoch = math.ceil(len(train_idx) / t.batch_size)
        total = steps_per_epoch * t.epochs
        state = AdamState()
        history = []
        metrics_fh = None
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
            with open(os.path.join(out_dir, "config.json"), "w") as fh:
                fh.write(cfg.to_json())
            metrics_fh = open(os.path.join(out_dir, "metrics.jsonl"), "w")
        try:
            for epoch in range(t.epochs):
                order = rng.permutation(train_idx)
                sums = np.zeros(3)
                lr = cfg.train.lr_init
                for b in range(steps_per_epoch):
                    idx = order[b * t.batch_size:(b + 1) * t.batch_size]
                    loss, la, lo, _ = batch_losses(model, data, idx)
                    if not np.isfinite(loss.data):
                        raise TrainingAbort(f"non-finite loss at epoch {epoch} batch {b}")
                    grads = backward(loss, params)
                    lr = cosine_lr(epoch * steps_per_epoch + b, total, t)
                    adam_step(params, grads, state, lr, t.weight_decay)
                    sums += [float(loss.data), float(la.data), float(lo.data)]
                rec = {"epoch": epoch + 1, "lr": lr, "loss": sums[0] / steps_per_epoch,
                       "loss_a": sums[1] / steps_per_epoch, "loss_o": sums[2] / steps_per_epoch}
                if (epoch + 1) % t.eval_every == 0 or epoch + 1 == t.epochs:
                    ev = evaluate(model, data, "test")
                    rec.update(top1=ev.top1, top5=ev.top5, point_top1=ev.point_top1, frame_top1=ev.frame_top1,
                               retained_fraction=ev.retained_fraction)
                rec["seconds"] = time.perf_counter() - start
                history.append(rec)
                if metrics_fh:
                    metrics_fh.write(json.dumps(rec) + "\n")
                    metrics_fh.flush()
                if log:
                    log(rec)
                if out_dir and t.checkpoint_every and (epoch + 1) % t.checkpoint_every == 0:
                    checkpoint.save(os.path.join(out_dir, f"model-epoch{epoch + 1}.evck"), model.state_dict())
        finally:
            if metrics_fh:
                metrics_fh.close()
        final = evaluate(model, data, "test")
        if out_dir:
            checkpoint.save(os.path.join(out_dir, "model.evck"), model.state_dict())
        return TrainResult(model, history, final, time.perf_counter() - start)


def load_model(cfg: RunConfig, path: str, num_classes: int) -> EventClassifier:
    with precision(cfg.train.precision):
        model = EventClassifier(cfg, num_classes, np.random.default_rng([cfg.train.seed, 0]))
        model.load_state_dict(checkpoint.load(path))
    return model


def lambda_zero_point_gradients(model: EventClassifier, data: EventDataset, idx) -> dict:
    """Gradients of the total loss for every point-branch parameter (all zero when lambda = 0)."""
    loss, *_ = batch_losses(model, data, idx)
    return backward(loss, model.point_parameters())


