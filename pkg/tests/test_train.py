import json

import numpy as np
import pytest

from crossfuse.config import load_config
from crossfuse.data import generate_synthetic, load_dataset
from crossfuse.model import build_model, loss_fn
from crossfuse.optim import Adam
from crossfuse.train import evaluate, predict, run_ablation, run_training, train


@pytest.fixture(scope="module")
def overfit_set(tmp_path_factory):
    return load_dataset(generate_synthetic(tmp_path_factory.mktemp("of"), load_config("desk"), 32, 8,
                                           seed=11))


def test_loss_decreases_first_five_steps(overfit_set):
    cfg = load_config("desk")
    model = build_model(cfg, 0)
    opt = Adam(model.named_parameters(), lr=1e-3)
    batch, labels = overfit_set.batch(np.arange(32))
    losses = []
    for _ in range(6):
        loss = loss_fn(model(batch), labels, cfg.task)
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(float(loss.data))
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_evaluate_does_not_mutate(overfit_set):
    model = build_model(load_config("desk"), 0)
    before = {k: v.copy() for k, v in model.state().items()}
    evaluate(model, overfit_set, np.arange(32))
    for k, v in model.state().items():
        np.testing.assert_array_equal(v, before[k])
    assert model.training


def test_evaluate_is_deterministic(overfit_set):
    model = build_model(load_config("desk"), 0)
    idx = np.arange(32)
    np.testing.assert_array_equal(predict(model, overfit_set, idx), predict(model, overfit_set, idx))


def test_training_determinism(overfit_set):
    cfg = load_config("desk")
    a = train(overfit_set, cfg, np.arange(32), seed=3, epochs=2)
    b = train(overfit_set, cfg, np.arange(32), seed=3, epochs=2)
    assert a.log == b.log
    for k, v in a.model.state().items():
        assert v.tobytes() == b.model.state()[k].tobytes()
    c = train(overfit_set, cfg, np.arange(32), seed=4, epochs=1)
    assert c.log[0]["loss"] != a.log[0]["loss"]


def test_run_training_outputs(small_manifest, tmp_path, desk):
    ds = load_dataset(small_manifest)
    res, report = run_training(ds, desk, tmp_path, fold=0, seed=0, epochs=2)
    assert (tmp_path / "checkpoint.bin").exists()
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert metrics["n_samples"] == len(ds.indices("test", 0)) == report.n_samples
    lines = (tmp_path / "train_log.txt").read_text().splitlines()
    assert [line.split()[0] for line in lines] == ["0", "1"]
    assert len(lines[0].split()) == 4


def test_log_is_append_only(overfit_set, tmp_path):
    log = tmp_path / "log.txt"
    log.write_text("previous\n")
    train(overfit_set, load_config("desk"), np.arange(8), seed=0, log_path=log, epochs=1)
    lines = log.read_text().splitlines()
    assert lines[0] == "previous" and len(lines) == 2


def test_multilabel_training_runs(multilabel_manifest):
    path, cfg = multilabel_manifest
    ds = load_dataset(path)
    res = train(ds, cfg, ds.indices("train"), ds.indices("test"), seed=0, epochs=2)
    assert 0.0 <= res.final["test_acc"] <= 1.0
    assert evaluate(res.model, ds, ds.indices("test")).task == "multi_label"


def test_ablation_summary(small_manifest, desk):
    out = run_ablation(small_manifest, desk.replace(**{"train.epochs": 1}),
                       modes=("adaptive", "concat"), seeds=(0,), fold=0)
    assert set(out["summary"]) == {"adaptive", "concat"}
    assert set(out["checks"]) == {"adaptive>=concat"}
    assert len(out["runs"]) == 2
