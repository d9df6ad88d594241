import json
import subprocess
import sys

import pytest

from crossfuse.cli import EXIT_INVALID, EXIT_IO, EXIT_OK, main


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen-synth", "--samples", "48", "--seed", "1", "--config", "desk",
                 "--out", str(root / "data")]) == EXIT_OK
    manifest = root / "data" / "manifest.json"
    assert main(["train", "--manifest", str(manifest), "--config", "desk", "--fold", "0",
                 "--epochs", "1", "--quiet", "--out", str(root / "run")]) == EXIT_OK
    return root, manifest


def test_train_artifacts(trained):
    root, _ = trained
    for name in ("checkpoint.bin", "metrics.json", "train_log.txt"):
        assert (root / "run" / name).exists()


def test_eval_writes_report(trained, capsys):
    root, manifest = trained
    assert main(["eval", "--checkpoint", str(root / "run" / "checkpoint.bin"),
                 "--manifest", str(manifest)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "fold=0" in out and "accuracy=" in out
    report = json.loads((root / "run" / "eval_test.json").read_text())
    assert report["n_samples"] == 8


def test_folds_command(trained, tmp_path, capsys):
    _, manifest = trained
    assert main(["folds", "--manifest", str(manifest), "--report", str(tmp_path / "f.json")]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.count("[ok]") == 5
    assert "never tested: [21, 22, 23, 24]" in out
    assert json.loads((tmp_path / "f.json").read_text())["valid"]


def test_folds_wrong_actor_set(tmp_path):
    path = tmp_path / "m.json"
    path.write_text(json.dumps({"task": "single_label", "class_names": ["a"],
                                "samples": [{"id": "x", "actor": 1}]}))
    assert main(["folds", "--manifest", str(path)]) == EXIT_INVALID


def test_param_count(tmp_path, capsys):
    assert main(["param-count", "--config", "desk", "--report", str(tmp_path / "p.json")]) == EXIT_OK
    rep = json.loads((tmp_path / "p.json").read_text())
    assert rep["count"] == rep["groups"]["fusion.va"] + rep["groups"]["fusion.av"]
    assert "prefix='fusion.'" in capsys.readouterr().out


def test_grad_check_suite(tmp_path):
    assert main(["grad-check", "--module", "model", "--report", str(tmp_path / "g.json")]) == EXIT_OK
    cases = json.loads((tmp_path / "g.json").read_text())["cases"]
    assert cases and all(c["passed"] for c in cases)


def test_grad_check_impossible_tolerance():
    assert main(["grad-check", "--module", "model", "--tol", "0"]) == EXIT_INVALID


def test_exit_codes(tmp_path):
    assert main(["eval", "--checkpoint", str(tmp_path / "none.bin"),
                 "--manifest", str(tmp_path / "none.json")]) == EXIT_IO
    assert main(["train", "--manifest", "x", "--out", "y", "--mode", "late"]) == EXIT_INVALID
    assert main([]) == EXIT_INVALID
    (tmp_path / "bad.bin").write_bytes(b"garbage")
    assert main(["eval", "--checkpoint", str(tmp_path / "bad.bin"),
                 "--manifest", str(tmp_path / "none.json")]) == EXIT_INVALID


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "crossfuse", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("train", "eval", "grad-check", "param-count", "gen-synth", "folds", "ablation"):
        assert cmd in proc.stdout
