import json
import math

import numpy as np
import pytest
import torch

from deepoint.errors import NonFiniteLoss, SingleClassDataset
from deepoint.model import PointingOutput, normalize_direction, pointing_probability
from deepoint.trainer import (
    Checkpoint,
    TrainConfig,
    balanced_batches,
    fit_windows,
    loss,
    predict_windows,
    train,
)
from deepoint.windows import build_windows


def output_from(logits, raw):
    nu, zero = normalize_direction(raw)
    return PointingOutput(pointing_probability(logits), nu, logits, raw, zero)


# ---------------------------------------------------------------- loss


def test_perfect_prediction_has_near_zero_loss():
    target = torch.tensor([[0.0, 0.6, 0.8]], dtype=torch.float64)
    out = output_from(torch.tensor([[30.0, -30.0]], dtype=torch.float64), target.clone())
    total, parts = loss(out, torch.tensor([True]), target, torch.tensor([True]))
    assert parts["ce"] < 1e-12
    # the arccos clamp at 1 - 1e-7 leaves a floor of sqrt(2e-7) rad
    assert parts["direction"] < 5e-4
    assert total.item() < 5e-4


def test_cosine_mode_is_exactly_zero_at_target():
    target = torch.tensor([[1.0, 0.0, 0.0]], dtype=torch.float64)
    out = output_from(torch.tensor([[30.0, -30.0]], dtype=torch.float64), target.clone())
    _, parts = loss(out, torch.tensor([True]), target, torch.tensor([True]), mode="cosine")
    assert parts["direction"] == 0.0


def test_orthogonal_direction_costs_half_pi():
    out = output_from(torch.zeros(1, 2, dtype=torch.float64), torch.tensor([[1.0, 0.0, 0.0]], dtype=torch.float64))
    total, parts = loss(out, torch.tensor([True]), torch.tensor([[0.0, 1.0, 0.0]], dtype=torch.float64),
                        torch.tensor([True]), loss_weight=2.0)
    assert parts["ce"] == pytest.approx(math.log(2))
    assert parts["direction"] == pytest.approx(math.pi / 2)
    assert total.item() == pytest.approx(math.log(2) + math.pi)


def test_non_pointing_frames_give_zero_direction_gradient():
    raw = torch.randn(4, 3, dtype=torch.float64, requires_grad=True)
    logits = torch.randn(4, 2, dtype=torch.float64, requires_grad=True)
    y_point = torch.tensor([False, False, True, True])
    has = torch.tensor([False, False, True, False])
    y_dir = torch.tensor([[0.0, 0.0, 1.0]] * 4, dtype=torch.float64)
    total, parts = loss(output_from(logits, raw), y_point, y_dir, has)
    total.backward()
    assert (raw.grad[[0, 1, 3]] == 0).all()
    assert raw.grad[2].abs().sum() > 0
    assert parts["skipped"] == 1


# ---------------------------------------------------------------- sampling


def test_balanced_batches_class_fraction():
    labels = np.zeros(4000, dtype=bool)
    labels[: int(0.275 * 4000)] = True
    gen = balanced_batches(labels, 64, seed=0)
    fracs = np.array([labels[next(gen)].mean() for _ in range(1000)])
    # aggregate over 64000 draws: sd 0.002, so 0.05 is > 20 sigma
    assert abs(fracs.mean() - 0.5) < 0.05
    # per-batch fractions follow Binomial(64, 1/2)/64 with sd 1/16
    assert abs(fracs.std() - 1 / 16) < 0.01


def test_balanced_batches_deterministic_and_size_one():
    labels = np.arange(100) % 4 == 0
    a, b = balanced_batches(labels, 8, 3), balanced_batches(labels, 8, 3)
    for _ in range(20):
        np.testing.assert_array_equal(next(a), next(b))
    g = balanced_batches(labels, 1, 5)
    draws = np.array([labels[next(g)][0] for _ in range(4000)])
    assert abs(draws.mean() - 0.5) < 0.03


def test_single_class_dataset_rejected():
    with pytest.raises(SingleClassDataset):
        next(balanced_batches(np.zeros(10, dtype=bool), 4, 0))


# ---------------------------------------------------------------- configs and checkpoints


def test_train_config_round_trip():
    cfg = TrainConfig.toy(max_epochs=3).with_model(window=7, variant="DP-B")
    assert TrainConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1)
    with pytest.raises(ValueError):
        TrainConfig(direction_loss="l2")


def test_checkpoint_round_trip(tmp_path):
    cfg = TrainConfig.toy()
    torch.manual_seed(0)
    from deepoint.model import DeePointNet
    from deepoint.trainer import snapshot

    net = DeePointNet(cfg.model)
    ck = Checkpoint(snapshot(net), cfg.model, cfg, 3, {"f1": 0.5}, [{"epoch": 1}])
    path = ck.save(tmp_path / "c.npz")
    back = Checkpoint.load(path)
    assert back.model_config == cfg.model and back.train_config == cfg
    assert back.epoch == 3 and back.metrics == {"f1": 0.5} and back.history == [{"epoch": 1}]
    for k, v in ck.parameters.items():
        np.testing.assert_array_equal(back.parameters[k], v)


# ---------------------------------------------------------------- loop


@pytest.fixture(scope="module")
def tiny_windows(tiny_dataset):
    return build_windows(tiny_dataset, "train", 3), build_windows(tiny_dataset, "val", 3)


def small_cfg(**kw):
    base = dict(max_epochs=3, steps_per_epoch=15, batch_size=8, dtype="float64")
    base.update(kw)
    return TrainConfig.toy(**base).with_model(embed_dim=16, joint_layers=1, temporal_layers=1, window=3)


def test_same_seed_identical_curves_and_weights(tiny_windows, tmp_path):
    tr, va = tiny_windows
    a = fit_windows(tr, va, small_cfg(), tmp_path / "a.jsonl")
    b = fit_windows(tr, va, small_cfg(), tmp_path / "b.jsonl")
    la = [json.loads(x) for x in (tmp_path / "a.jsonl").read_text().splitlines()]
    lb = [json.loads(x) for x in (tmp_path / "b.jsonl").read_text().splitlines()]
    assert [r["loss"] for r in la] == [r["loss"] for r in lb]
    for k in a.parameters:
        np.testing.assert_array_equal(a.parameters[k], b.parameters[k])


def test_checkpoint_is_best_validation_epoch(tiny_windows):
    tr, va = tiny_windows
    ck = fit_windows(tr, va, small_cfg(max_epochs=4))
    errs = [r["val_angular_error"] for r in ck.history]
    assert ck.epoch == 1 + int(np.nanargmin(errs))
    p, nu = predict_windows(ck.model(torch.float64), va)
    from deepoint.evalkit import mean_angular_error

    gts = np.where(va.pointing[:, None], va.directions, np.nan)
    assert mean_angular_error(nu, gts) == pytest.approx(min(errs), abs=1e-9)


def test_early_stopping_respects_patience(tiny_windows):
    tr, va = tiny_windows
    ck = fit_windows(tr, va, small_cfg(max_epochs=30, patience=1, steps_per_epoch=3))
    hist = ck.history
    errs = [r["val_angular_error"] for r in hist]
    assert len(hist) < 30 or errs[-1] <= min(errs[:-1])
    if len(hist) < 30:
        assert errs[-1] >= min(errs[:-1])


def test_non_finite_loss_returns_last_good(tiny_windows, monkeypatch):
    tr, va = tiny_windows
    import deepoint.trainer as T

    calls = {"n": 0}
    real = T.loss

    def flaky(*a, **k):
        calls["n"] += 1
        total, parts = real(*a, **k)
        if calls["n"] > 15:
            total = total * float("nan")
        return total, parts

    monkeypatch.setattr(T, "loss", flaky)
    ck = fit_windows(tr, va, small_cfg())
    assert ck.epoch == 1
    calls["n"] = 100
    with pytest.raises(NonFiniteLoss):
        fit_windows(tr, va, small_cfg())


def test_train_entry_point_writes_log(tiny_dataset, tmp_path):
    cfg = small_cfg(max_epochs=1, steps_per_epoch=5)
    ck = train(tiny_dataset, tiny_dataset.splits, cfg, tmp_path / "log.jsonl")
    rec = json.loads((tmp_path / "log.jsonl").read_text().splitlines()[0])
    assert {"epoch", "loss", "ce", "direction", "val_angular_error", "val_f1"} <= set(rec)
    assert ck.model_config == cfg.model


def test_zero_direction_weight_control():
    from .conftest import build_dataset

    ds = build_dataset(n_rooms=1, n_actors=3, duration_s=40.0)
    tr, va = build_windows(ds, "train", 3), build_windows(ds, "val", 3)
    hist = {}
    for lam in (0.0, 1.0):
        cfg = small_cfg(max_epochs=4, steps_per_epoch=60, loss_weight=lam, patience=10, dtype="float32")
        hist[lam] = fit_windows(tr, va, cfg).history
    # without the direction term the head stays near the random-direction level
    assert min(r["val_angular_error"] for r in hist[0.0]) > 80
    assert hist[0.0][-1]["val_f1"] > hist[0.0][0]["val_f1"]
    assert hist[1.0][-1]["val_angular_error"] < 60
