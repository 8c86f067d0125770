from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stgcn import engine as E
from stgcn.data import SynthParams, synth_dataset
from stgcn.graph import builtin_layout
from stgcn.model import STGCN, ModelConfig, init_parameters
from stgcn.training import (
    Checkpoint, CheckpointError, TrainConfig, TrainingError, build_adjacency, evaluate, load_checkpoint, lr_at,
    model_from_checkpoint, run_experiment, save_checkpoint, sgd_step, topk_correct, train,
)

TINY = ModelConfig(channels=(8, 8, 16), strides=(1, 2, 1), temporal_kernel=3, dropout=0.0)


@pytest.fixture(scope="module")
def tiny_data():
    p = SynthParams(samples_per_class=4, num_frames=16)
    return synth_dataset(p, 0, "train")[1], synth_dataset(p, 1, "val")[1]


@pytest.fixture(scope="module")
def tiny_run(tiny_data):
    tr, va = tiny_data
    cfg = TrainConfig(epochs=3, batch_size=4, seed=3)
    return run_experiment(builtin_layout("openpose18"), "spatial", tr, va, 3, TINY, cfg)


def test_lr_schedule_values():
    assert lr_at(0) == 0.01
    assert lr_at(9) == 0.01
    assert lr_at(10) == 0.001
    assert lr_at(25) == 1e-4
    with pytest.raises(ValueError):
        lr_at(-1)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 200))
def test_lr_is_non_increasing(epoch):
    assert lr_at(epoch + 1) <= lr_at(epoch)


def test_sgd_momentum_hand_values():
    p = E.Tensor(np.array([1.0]), requires_grad=True, dtype=np.float64)
    vel = {}
    p.grad = np.array([2.0])
    sgd_step([("p", p)], 0.1, 0.9, vel)
    assert p.data[0] == pytest.approx(0.8)
    p.grad = np.array([2.0])
    sgd_step([("p", p)], 0.1, 0.9, vel)
    assert vel["p"][0] == pytest.approx(3.8)
    assert p.data[0] == pytest.approx(0.8 - 0.38)


def test_sgd_missing_grad_is_zero_and_nan_is_fatal():
    p = E.Tensor(np.array([1.0]), requires_grad=True)
    sgd_step([("p", p)], 0.1, 0.9, {})
    assert p.data[0] == 1.0
    p.grad = np.array([np.nan])
    with pytest.raises(TrainingError, match="'p'"):
        sgd_step([("p", p)], 0.1, 0.9, {})


def test_topk_ties_prefer_lower_class():
    logits = np.array([[1.0, 1.0, 0.0]])
    assert topk_correct(logits, [0], 1).tolist() == [True]
    assert topk_correct(logits, [1], 1).tolist() == [False]
    assert topk_correct(logits, [2], 5).tolist() == [True]


def test_train_config_rejects_unknown_keys():
    with pytest.raises(ValueError, match="unknown training options"):
        TrainConfig.from_dict({"learning_rate": 0.1})


def test_history_records(tiny_run):
    h = tiny_run.history
    assert [r["epoch"] for r in h] == [0, 1, 2]
    assert {"lr", "train_loss", "train_top1", "val_top1", "val_top5", "val_k"} <= set(h[0])
    assert h[0]["val_k"] == 3 and h[0]["val_top5"] == 1.0


def test_eval_clamps_topk_with_note(tiny_run, tiny_data):
    ev = evaluate(tiny_run.net, tiny_data[1], topk=5)
    assert ev["k"] == 3 and "clamped" in ev["note"]
    with pytest.raises(TrainingError):
        evaluate(tiny_run.net, [])


def test_checkpoint_roundtrip(tmp_path, tiny_run, tiny_data):
    path = tmp_path / "m.ckpt"
    save_checkpoint(tiny_run.checkpoint, path)
    ckpt = load_checkpoint(path)
    assert ckpt.strategy == "spatial_configuration" and ckpt.gravity == tiny_run.checkpoint.gravity
    net = model_from_checkpoint(ckpt)
    ev = evaluate(net, tiny_data[1])
    assert ev["top1"] == tiny_run.history[-1]["val_top1"]
    assert ev["loss"] == pytest.approx(tiny_run.history[-1]["val_loss"], rel=1e-6)


def test_checkpoint_corruption_detected(tmp_path, tiny_run):
    path = tmp_path / "m.ckpt"
    save_checkpoint(tiny_run.checkpoint, path)
    raw = path.read_bytes()
    (tmp_path / "trunc.ckpt").write_bytes(raw[:-10])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(tmp_path / "trunc.ckpt")
    (tmp_path / "magic.ckpt").write_bytes(b"XXXXXXXX" + raw[8:])
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(tmp_path / "magic.ckpt")
    with pytest.raises(CheckpointError, match="not found"):
        load_checkpoint(tmp_path / "none.ckpt")


def test_checkpoint_layout_mismatch(tiny_run):
    with pytest.raises(CheckpointError, match="ntu25"):
        model_from_checkpoint(tiny_run.checkpoint, builtin_layout("ntu25"))


def test_spatial_needs_training_split():
    with pytest.raises(TrainingError, match="gravity stats"):
        build_adjacency(builtin_layout("openpose18"), "spatial")
    pa, stats = build_adjacency(builtin_layout("openpose18"), "distance")
    assert stats is None and pa.num_subsets == 2


def test_training_is_deterministic(tiny_data):
    tr, va = tiny_data
    cfg = TrainConfig(epochs=2, batch_size=4, seed=9, fragment_window=12, random_moving=True)
    dropout_cfg = ModelConfig(channels=(8, 8, 16), strides=(1, 2, 1), temporal_kernel=3, dropout=0.5)
    a = run_experiment(builtin_layout("openpose18"), "distance", tr, va, 3, dropout_cfg, cfg)
    b = run_experiment(builtin_layout("openpose18"), "distance", tr, va, 3, dropout_cfg, cfg)
    assert a.history == b.history
    assert all(np.array_equal(a.checkpoint.state[k], b.checkpoint.state[k]) for k in a.checkpoint.state)


def test_empty_training_set_rejected():
    with pytest.raises(Exception, match="empty"):
        run_experiment(builtin_layout("openpose18"), "uni", [], None, 3, TINY, TrainConfig(epochs=1))


def test_loss_decreases_on_tiny_set(tiny_data):
    tr, _ = tiny_data
    r = run_experiment(builtin_layout("openpose18"), "uni", tr, None, 3, TINY,
                       TrainConfig(epochs=8, batch_size=4, seed=0))
    assert r.history[-1]["train_loss"] < r.history[0]["train_loss"]
    assert r.history[0]["val_top1"] is None


def test_checkpoint_meta_is_plain_json(tiny_run):
    ck = tiny_run.checkpoint
    assert isinstance(ck, Checkpoint)
    assert ck.model_config["channels"] == [8, 8, 16]
    assert ck.train_config["seed"] == 3


def test_on_epoch_can_stop_training(tiny_data):
    tr, _ = tiny_data
    pa, _ = build_adjacency(builtin_layout("openpose18"), "uni")
    net = STGCN(3, pa, TINY)
    init_parameters(net, 0)
    seen = []
    stop_after_two = lambda r: seen.append(r) or len(seen) == 2
    history = train(net, tr, None, TrainConfig(epochs=10, batch_size=4), on_epoch=stop_after_two)
    assert len(history) == 2 and seen == history


def test_momentum_unrolled():
    p = E.Tensor(np.array([0.0]), requires_grad=True, dtype=np.float64)
    vel = {}
    steps = []
    for _ in range(2):
        before = p.data[0]
        p.grad = np.array([1.0])
        sgd_step([("p", p)], 1.0, 0.9, vel)
        steps.append(before - p.data[0])
    assert steps == pytest.approx([1.0, 1.9])


def test_step_count_per_epoch(tiny_data):
    tr, _ = tiny_data
    r = run_experiment(builtin_layout("openpose18"), "uni", tr[:4], None, 3, TINY,
                       TrainConfig(epochs=1, batch_size=2))
    assert r.history[0]["steps"] == 2


def test_evaluate_ignores_order(tiny_run, tiny_data):
    va = tiny_data[1]
    a = evaluate(tiny_run.net, va)
    b = evaluate(tiny_run.net, va[::-1])
    assert a["top1"] == b["top1"] and a["loss"] == pytest.approx(b["loss"], rel=1e-9)
