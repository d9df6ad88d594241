"""Training loop, evaluation and ablation orchestration."""
import json
import multiprocessing
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import FusionConfig
from .data import Dataset
from .metrics import multi_label_report, single_label_report
from .model import build_model, loss_fn, save_checkpoint
from .optim import Adam

ABLATION_MODES = ("adaptive", "concat", "a2v", "v2a", "no_selfattn", "no_residual", "mca_baseline")


@dataclass
class TrainResult:
    model: object
    log: list = field(default_factory=list)   # dicts: epoch, loss, acc, test_acc

    @property
    def final(self):
        return self.log[-1] if self.log else {}


def predict(model, dataset, idx, batch_size=64, threshold=0.5):
    """Eval-mode predictions; restores the model's previous mode."""
    was_training = model.training
    model.eval()
    out = []
    try:
        with T.no_grad():
            for s in range(0, len(idx), batch_size):
                batch, _ = dataset.batch(idx[s:s + batch_size])
                out.append(model(batch).labels(threshold))
    finally:
        model.train(was_training)
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def evaluate(model, dataset, idx, threshold=0.5):
    idx = np.asarray(idx)
    pred = predict(model, dataset, idx, threshold=threshold)
    truth = dataset.labels[idx]
    if dataset.task == "multi_label":
        return multi_label_report(truth, pred, dataset.class_names)
    return single_label_report(truth, pred, dataset.n_classes, dataset.class_names)


def _accuracy(pred, labels, task, threshold):
    if task == "multi_label":
        return float(((pred.probabilities >= threshold) == (labels == 1)).mean())
    return float((pred.logits.data.argmax(-1) == labels).mean())


def train(dataset: Dataset, cfg: FusionConfig, train_idx, test_idx=None, seed=0,
          log_path=None, epochs=None, verbose=False):
    """Adam training from a seeded init. One generator drives init, dropout
    and shuffling, so a seed fixes the whole trajectory."""
    tc = cfg.train
    model = build_model(cfg, seed)
    rng = model.rng
    opt = Adam(model.named_parameters(), tc.lr, tc.beta1, tc.beta2, tc.eps)
    train_idx = np.asarray(train_idx)
    log = []
    fh = open(log_path, "a") if log_path else None
    try:
        for epoch in range(epochs if epochs is not None else tc.epochs):
            model.train()
            order = rng.permutation(train_idx)
            tot_loss = tot_acc = 0.0
            for s in range(0, len(order), tc.batch_size):
                idx = order[s:s + tc.batch_size]
                batch, labels = dataset.batch(idx)
                pred = model(batch)
                loss = loss_fn(pred, labels, cfg.task)
                opt.zero_grad()
                loss.backward()
                opt.step()
                tot_loss += float(loss.data) * len(idx)
                tot_acc += _accuracy(pred, labels, cfg.task, tc.threshold) * len(idx)
            rec = {"epoch": epoch, "loss": tot_loss / len(order), "acc": tot_acc / len(order)}
            if test_idx is not None and len(test_idx):
                rec["test_acc"] = evaluate(model, dataset, test_idx, tc.threshold).accuracy
            log.append(rec)
            line = f"{epoch} {rec['loss']:.6f} {rec['acc']:.4f}"
            if "test_acc" in rec:
                line += f" {rec['test_acc']:.4f}"
            if fh:
                fh.write(line + "\n")
                fh.flush()
            if verbose:
                print(line, flush=True)
    finally:
        if fh:
            fh.close()
    return TrainResult(model, log)


def run_training(dataset, cfg, out_dir, fold=None, seed=0, epochs=None, verbose=False):
    """Train on the fold (or manifest split), write checkpoint, log and
    metrics into ``out_dir``; returns (TrainResult, MetricsReport)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_idx = dataset.indices("train", fold)
    test_idx = dataset.indices("test", fold)
    log_path = out_dir / "train_log.txt"
    if log_path.exists():
        log_path.unlink()
    res = train(dataset, cfg, train_idx, test_idx, seed, log_path, epochs, verbose)
    report = evaluate(res.model, dataset, test_idx, cfg.train.threshold)
    save_checkpoint(out_dir / "checkpoint.bin", res.model,
                    {"seed": seed, "fold": fold, "mode": cfg.mode})
    (out_dir / "metrics.json").write_text(json.dumps(report.to_dict(), indent=2))
    return res, report


# ---------------------------------------------------------------------------
# ablation
# ---------------------------------------------------------------------------

_BLAS_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def _ablation_job(args):
    manifest, cfg_dict, mode, seed, fold = args
    from .data import load_dataset
    ds = load_dataset(manifest)
    cfg = FusionConfig.from_dict(cfg_dict).replace(mode=mode)
    t0 = time.perf_counter()
    res = train(ds, cfg, ds.indices("train", fold), None, seed)
    rep = evaluate(res.model, ds, ds.indices("test", fold), cfg.train.threshold)
    return {"mode": mode, "seed": seed, "test_acc": rep.accuracy,
            "train_acc": res.final.get("acc"), "final_loss": res.final.get("loss"),
            "seconds": time.perf_counter() - t0}


def run_ablation(manifest, cfg, modes=ABLATION_MODES, seeds=(0, 1, 2), fold=None, jobs=1):
    """Train every (mode, seed) pair and summarize mean held-out accuracy."""
    jobs_args = [(str(manifest), cfg.to_dict(), m, s, fold) for m in modes for s in seeds]
    if jobs > 1:
        # workers start fresh with single-threaded BLAS, otherwise the jobs
        # oversubscribe the cores and run slower than serially
        saved = {k: os.environ.get(k) for k in _BLAS_VARS}
        os.environ.update({k: "1" for k in _BLAS_VARS})
        try:
            ctx = multiprocessing.get_context("spawn")
            with ProcessPoolExecutor(jobs, mp_context=ctx) as ex:
                runs = list(ex.map(_ablation_job, jobs_args))
        finally:
            for k, v in saved.items():
                if v is None:
                    os.environ.pop(k, None)
                else:
                    os.environ[k] = v
    else:
        runs = [_ablation_job(a) for a in jobs_args]
    summary = {}
    for m in modes:
        accs = [r["test_acc"] for r in runs if r["mode"] == m]
        summary[m] = {"mean_test_acc": float(np.mean(accs)), "test_accs": accs}
    checks = {}
    if "adaptive" in summary:
        a = summary["adaptive"]["mean_test_acc"]
        for other in ("concat", "a2v", "v2a"):
            if other in summary:
                checks[f"adaptive>={other}"] = bool(a >= summary[other]["mean_test_acc"])
    return {"runs": runs, "summary": summary, "checks": checks}
