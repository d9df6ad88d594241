"""Command-line harness.

Every subcommand prints structured text to stdout. Commands that produce
metrics also write a JSON report. Exit status is 0 on success, 1 when
inputs or results fail validation, and 2 on I/O failure.
"""
import argparse
import json
import sys
import time
from pathlib import Path

from .config import FUSION_MODES, load_config
from .data import check_fold, generate_synthetic, load_dataset, load_manifest, make_folds
from .gradsuite import SUITES, run_suite
from .model import build_model, load_checkpoint, param_count
from .train import evaluate, run_ablation, run_training

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


def _write_report(path, doc):
    if path is None:
        return
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, default=str))
    print(f"report: {path}")


def _csv(kind):
    def parse(text):
        return tuple(kind(x) for x in text.split(",") if x.strip())
    return parse


# ---------------------------------------------------------------------------

def cmd_train(args):
    cfg = load_config(args.config)
    if args.mode:
        cfg = cfg.replace(mode=args.mode)
    ds = load_dataset(args.manifest)
    t0 = time.perf_counter()
    res, report = run_training(ds, cfg, args.out, args.fold, args.seed, args.epochs,
                               verbose=not args.quiet)
    print(f"mode={cfg.mode} seed={args.seed} fold={args.fold} "
          f"epochs={len(res.log)} seconds={time.perf_counter() - t0:.1f}")
    for line in report.lines():
        print(line)
    print(f"checkpoint: {Path(args.out) / 'checkpoint.bin'}")
    print(f"report: {Path(args.out) / 'metrics.json'}")
    return EXIT_OK


def cmd_eval(args):
    model, meta = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.manifest)
    fold = args.fold if args.fold is not None else meta.get("fold")
    idx = ds.indices(args.split, fold)
    report = evaluate(model, ds, idx, model.cfg.train.threshold)
    print(f"checkpoint={args.checkpoint} split={args.split} fold={fold}")
    for line in report.lines():
        print(line)
    out = args.report or Path(args.checkpoint).with_name(f"eval_{args.split}.json")
    _write_report(out, report.to_dict())
    return EXIT_OK


def cmd_grad_check(args):
    t0 = time.perf_counter()
    reports = run_suite(args.module)
    if args.tol is not None:
        for r in reports:
            r.tol = args.tol
    for r in reports:
        print(r)
    failed = [r.name for r in reports if not r.passed]
    secs = time.perf_counter() - t0
    print(f"{len(reports) - len(failed)}/{len(reports)} passed in {secs:.1f}s")
    _write_report(args.report, {"seconds": secs, "cases": [
        {"name": r.name, "max_rel_error": r.max_rel_error, "tol": r.tol, "passed": r.passed,
         "worst": r.worst} for r in reports]})
    return EXIT_INVALID if failed else EXIT_OK


def cmd_param_count(args):
    cfg = load_config(args.config)
    if args.mode:
        cfg = cfg.replace(mode=args.mode)
    model = build_model(cfg, 0)
    total = param_count(model)
    part = param_count(model, args.prefix)
    groups = {}
    for name, p in model.named_parameters():
        key = ".".join(name.split(".")[:2])
        groups[key] = groups.get(key, 0) + p.size
    print(f"mode={cfg.mode} total={total}")
    for key, n in groups.items():
        print(f"  {key:<16} {n}")
    print(f"prefix={args.prefix!r} count={part} fraction={part / total:.6f}")
    _write_report(args.report, {"mode": cfg.mode, "total": total, "prefix": args.prefix,
                                "count": part, "fraction": part / total, "groups": groups})
    return EXIT_OK


def cmd_gen_synth(args):
    cfg = load_config(args.config)
    path = generate_synthetic(args.out, cfg, args.samples, args.classes, args.seed, args.actors,
                              args.test_fraction, args.noise, args.signal)
    print(f"task={cfg.task} samples={args.samples} classes={args.classes or cfg.n_classes} "
          f"seed={args.seed}")
    print(f"manifest: {path}")
    return EXIT_OK


def cmd_folds(args):
    doc = load_manifest(args.manifest)
    actors = sorted({int(s["actor"]) for s in doc["samples"]})
    folds = make_folds(actors)
    ok = True
    out = []
    for f in folds:
        problems = check_fold(f, actors)
        ok = ok and not problems
        status = "ok" if not problems else "; ".join(problems)
        print(f"fold {f.fold_index}: test={list(f.test_actors)} train={len(f.train_actors)} actors "
              f"[{status}]")
        out.append({"fold": f.fold_index, "test_actors": list(f.test_actors),
                    "train_actors": list(f.train_actors), "problems": problems})
    never = sorted(set(actors) - {a for f in folds for a in f.test_actors})
    print(f"actors never tested: {never}")
    _write_report(args.report, {"folds": out, "never_tested": never, "valid": ok})
    return EXIT_OK if ok else EXIT_INVALID


def cmd_ablation(args):
    cfg = load_config(args.config)
    out = Path(args.out)
    manifest = args.manifest
    if manifest is None:
        manifest = generate_synthetic(out / "data", cfg, args.samples, None, args.data_seed,
                                      test_fraction=args.test_fraction)
        print(f"generated synthetic data: {manifest}")
    t0 = time.perf_counter()
    result = run_ablation(manifest, cfg, args.modes, args.seeds, args.fold, args.jobs)
    result["seconds"] = time.perf_counter() - t0
    for run in result["runs"]:
        print(f"{run['mode']:<13} seed={run['seed']} test_acc={run['test_acc']:.4f} "
              f"train_acc={run['train_acc']:.4f} ({run['seconds']:.1f}s)")
    print("mean held-out accuracy:")
    for mode, s in result["summary"].items():
        print(f"  {mode:<13} {s['mean_test_acc']:.4f}")
    for name, ok in result["checks"].items():
        print(f"check {name}: {'pass' if ok else 'FAIL'}")
    print(f"total seconds: {result['seconds']:.1f}")
    _write_report(out / "ablation.json", result)
    return EXIT_OK if all(result["checks"].values()) else EXIT_INVALID


# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="crossfuse", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one model and write checkpoint, log and metrics")
    t.add_argument("--manifest", required=True)
    t.add_argument("--config", default="default", help="preset name or JSON file")
    t.add_argument("--fold", type=int, default=None)
    t.add_argument("--mode", choices=FUSION_MODES, default=None)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--quiet", action="store_true", help="do not echo epoch lines")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--fold", type=int, default=None)
    e.add_argument("--report", default=None)
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("grad-check", help="finite-difference gradient suite")
    g.add_argument("--module", default="all", choices=["all"] + list(SUITES))
    g.add_argument("--tol", type=float, default=None, help="override every case tolerance")
    g.add_argument("--report", default=None)
    g.set_defaults(func=cmd_grad_check)

    c = sub.add_parser("param-count", help="count parameters under a name prefix")
    c.add_argument("--config", default="default")
    c.add_argument("--prefix", default="fusion.")
    c.add_argument("--mode", choices=FUSION_MODES, default=None)
    c.add_argument("--report", default=None)
    c.set_defaults(func=cmd_param_count)

    s = sub.add_parser("gen-synth", help="write a synthetic dataset and manifest")
    s.add_argument("--samples", type=int, required=True)
    s.add_argument("--classes", type=int, default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--config", default="default")
    s.add_argument("--actors", type=int, default=24)
    s.add_argument("--test-fraction", type=float, default=None)
    s.add_argument("--noise", type=float, default=None)
    s.add_argument("--signal", type=float, default=None)
    s.set_defaults(func=cmd_gen_synth)

    f = sub.add_parser("folds", help="list actor folds and check their invariants")
    f.add_argument("--manifest", required=True)
    f.add_argument("--report", default=None)
    f.set_defaults(func=cmd_folds)

    a = sub.add_parser("ablation", help="train fusion modes over seeds and compare")
    a.add_argument("--manifest", default=None,
                   help="defaults to a freshly generated synthetic set under --out")
    a.add_argument("--config", default="desk")
    a.add_argument("--modes", type=_csv(str), default=("adaptive", "concat", "a2v", "v2a"))
    a.add_argument("--seeds", type=_csv(int), default=(0, 1, 2))
    a.add_argument("--fold", type=int, default=None)
    a.add_argument("--jobs", type=int, default=1)
    a.add_argument("--samples", type=int, default=1000)
    a.add_argument("--test-fraction", type=float, default=0.2)
    a.add_argument("--data-seed", type=int, default=123)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_ablation)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on bad usage; usage errors are validation failures here
        return EXIT_INVALID if e.code else EXIT_OK
    try:
        return args.func(args)
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
