import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from eventcrab.autodiff import Parameter, checkpoint
from eventcrab.config import RunConfig, TrainConfig
from eventcrab.events import SynthConfig
from eventcrab.frame_encoder import FrameEncoderConfig
from eventcrab.head import HeadConfig, topk_hits
from eventcrab.model import EventClassifier, EventDataset
from eventcrab.point_encoder import PointEncoderConfig
from eventcrab.sampler import SamplerConfig
from eventcrab.trainer import (
    AdamState,
    TrainingAbort,
    adam_step,
    batch_losses,
    cosine_lr,
    evaluate,
    lambda_zero_point_gradients,
    load_model,
    train,
)


def tiny_config(**train_overrides) -> RunConfig:
    return RunConfig(
        data=SynthConfig(num_classes=3, samples_per_class=5, height=16, width=16, duration_us=20_000, seed=3),
        sampler=SamplerConfig(n_slices=2, n_bins=8, grid=(8, 8), context_hw=(8, 8), rho=0.04),
        point=PointEncoderConfig(height=8, width=8, n_slices=2, patch=4, dim=8, depth=1, state=4, spgc_groups=4),
        frame=FrameEncoderConfig(height=8, width=8, n_frames=2, patch=4, dim=8, depth=1, heads=2),
        head=HeadConfig(),
        train=TrainConfig(**{"lr_init": 1e-2, "lr_min": 1e-3, "epochs": 2, "batch_size": 4, "seed": 11,
                             **train_overrides}),
    ).validate()


@pytest.fixture(scope="module")
def tiny_data():
    cfg = tiny_config()
    return EventDataset.synthetic(cfg)


# ---------------------------------------------------------------- optimizer

def test_zero_gradient_without_decay_leaves_parameters():
    p = {"w": Parameter(np.array([1.5, -2.0]))}
    adam_step(p, {"w": np.zeros(2)}, AdamState(), lr=0.1)
    np.testing.assert_array_equal(p["w"].data, [1.5, -2.0])


def test_first_step_moves_by_learning_rate(f64):
    p = {"w": Parameter(np.array([1.0]))}
    state = adam_step(p, {"w": np.array([1.0])}, AdamState(), lr=0.1)
    # bias-corrected m = 1 and v = 1, so the step is lr / (1 + eps)
    np.testing.assert_allclose(p["w"].data, [1.0 - 0.1 / (1.0 + 1e-8)], rtol=0, atol=1e-15)
    assert state.step == 1 and state.m["w"].shape == (1,)


def test_weight_decay_is_decoupled(f64):
    p = {"w": Parameter(np.array([2.0]))}
    adam_step(p, {"w": np.array([0.0])}, AdamState(), lr=0.1, wd=0.5)
    np.testing.assert_allclose(p["w"].data, [2.0 - 0.1 * 0.5 * 2.0])


def test_identical_states_give_identical_updates(rng):
    g = [rng.normal(size=(3, 2)) for _ in range(4)]
    out = []
    for _ in range(2):
        p, s = {"w": Parameter(np.ones((3, 2)))}, AdamState()
        for gi in g:
            adam_step(p, {"w": gi}, s, lr=0.01, wd=1e-3)
        out.append(p["w"].data.tobytes())
    assert out[0] == out[1]


def test_non_finite_gradient_names_the_parameter():
    p = {"blocks.0.w": Parameter(np.ones(2))}
    with pytest.raises(TrainingAbort, match="blocks.0.w"):
        adam_step(p, {"blocks.0.w": np.array([1.0, np.nan])}, AdamState(), lr=0.1)
    np.testing.assert_array_equal(p["blocks.0.w"].data, [1.0, 1.0])


# ---------------------------------------------------------------- schedule

def test_cosine_endpoints_and_midpoint():
    cfg = TrainConfig()
    assert cosine_lr(0, 300, cfg) == 1e-5
    assert cosine_lr(300, 300, cfg) == 1e-6
    assert math.isclose(cosine_lr(150, 300, cfg), 5.5e-6, rel_tol=1e-12)


@given(st.integers(1, 500))
def test_cosine_is_monotone(total):
    lrs = [cosine_lr(s, total, TrainConfig()) for s in range(total + 1)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_train_config_validation():
    for bad in [dict(lr_min=1.0), dict(epochs=0), dict(precision="f16"), dict(weight_decay=-1.0)]:
        with pytest.raises(Exception):
            TrainConfig(**bad).validate()


# ---------------------------------------------------------------- loss wiring

def test_lambda_zero_silences_the_point_branch(tiny_data):
    cfg = tiny_config().with_overrides(head={"lam": 0.0})
    model = EventClassifier(cfg, tiny_data.num_classes, np.random.default_rng(0))
    model.calibrate(tiny_data, [0, 1, 2, 3])
    grads = lambda_zero_point_gradients(model, tiny_data, [0, 1, 2, 3])
    assert grads and all(not g.any() for g in grads.values())
    live = tiny_config().with_overrides(head={"lam": 0.8})
    model = EventClassifier(live, tiny_data.num_classes, np.random.default_rng(0))
    model.calibrate(tiny_data, [0, 1, 2, 3])
    assert any(g.any() for g in lambda_zero_point_gradients(model, tiny_data, [0, 1, 2, 3]).values())


def test_total_is_weighted_sum(tiny_data):
    cfg = tiny_config()
    model = EventClassifier(cfg, tiny_data.num_classes, np.random.default_rng(0))
    total, la, lo, _ = batch_losses(model, tiny_data, [0, 1, 2])
    np.testing.assert_allclose(float(total.data), float(la.data) + 0.8 * float(lo.data), rtol=1e-6)


# ---------------------------------------------------------------- evaluation

def test_topk_on_one_hot_and_small_q():
    labels = np.array([2, 0, 1])
    one_hot = np.eye(5)[labels]
    assert topk_hits(one_hot, labels, 1).all() and topk_hits(one_hot, labels, 5).all()
    assert topk_hits(np.random.default_rng(0).uniform(size=(3, 5)), labels, 5).all()


def test_evaluate_reports_every_metric(tiny_data):
    model = EventClassifier(tiny_config(), tiny_data.num_classes, np.random.default_rng(0))
    ev = evaluate(model, tiny_data, "test")
    n = len(tiny_data.indices("test"))
    assert ev.probs.shape == (n, 3)
    np.testing.assert_allclose(ev.probs.sum(axis=1), 1.0, rtol=1e-5)
    np.testing.assert_allclose(np.linalg.norm(ev.fused, axis=1), 1.0, atol=1e-6)
    assert ev.top5 == 1.0  # k >= Q
    assert 0.0 < ev.retained_fraction <= 1.0
    assert len(ev.per_class) == 3
    assert set(ev.to_json()) >= {"top1", "top5", "per_class", "retained_fraction"}


# ---------------------------------------------------------------- training runs

def test_zero_learning_rate_is_a_no_op(tiny_data):
    cfg = tiny_config(lr_init=0.0, lr_min=0.0, epochs=1)
    model = EventClassifier(cfg, tiny_data.num_classes, np.random.default_rng([cfg.train.seed, 0]))
    model.calibrate(tiny_data, tiny_data.indices("train")[:32])
    before = evaluate(model, tiny_data, "test")
    result = train(cfg, tiny_data, model=model)
    np.testing.assert_array_equal(result.final.probs, before.probs)


def test_training_is_deterministic_and_logged(tiny_data, tmp_path):
    cfg = tiny_config()
    a = train(cfg, tiny_data, out_dir=tmp_path / "a")
    b = train(cfg, EventDataset.synthetic(cfg), out_dir=tmp_path / "b")
    strip = lambda h: [{k: v for k, v in r.items() if k != "seconds"} for r in h]  # noqa: E731
    assert strip(a.history) == strip(b.history)
    np.testing.assert_array_equal(a.final.probs, b.final.probs)
    assert (tmp_path / "a" / "model.evck").read_bytes() == (tmp_path / "b" / "model.evck").read_bytes()
    lines = (tmp_path / "a" / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == cfg.train.epochs
    for line in lines:
        assert {"epoch", "lr", "loss", "loss_a", "loss_o", "top1", "top5"} <= set(json.loads(line))
    assert RunConfig.load(tmp_path / "a" / "config.json") == cfg


def test_checkpoint_reload_gives_identical_metrics(tiny_data, tmp_path):
    cfg = tiny_config(epochs=1)
    result = train(cfg, tiny_data, out_dir=tmp_path)
    model = load_model(cfg, tmp_path / "model.evck", tiny_data.num_classes)
    again = evaluate(model, tiny_data, "test")
    np.testing.assert_array_equal(again.probs, result.final.probs)
    assert again.to_json() == result.final.to_json()


def test_non_finite_loss_aborts_with_location(tiny_data):
    cfg = tiny_config(epochs=1, calibrate=False)
    model = EventClassifier(cfg, tiny_data.num_classes, np.random.default_rng(0))
    model.frame.head.bias.data[:] = np.nan
    with pytest.raises(TrainingAbort, match="epoch 0 batch 0"):
        train(cfg, tiny_data, model=model)


def test_empty_split_is_rejected(tiny_data):
    cfg = tiny_config()
    data = EventDataset(tiny_data.streams, tiny_data.labels, ["train"] * len(tiny_data), tiny_data.class_names, cfg)
    with pytest.raises(TrainingAbort):
        train(cfg, data)


def test_checkpoint_container_round_trip(tmp_path, rng):
    state = {"a.weight": rng.normal(size=(3, 4)).astype(np.float32), "b": np.arange(5.0)}
    checkpoint.save(tmp_path / "m.evck", state)
    back = checkpoint.load(tmp_path / "m.evck")
    assert checkpoint.dumps(back) == checkpoint.dumps(state)
