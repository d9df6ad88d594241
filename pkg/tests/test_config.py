import json

import pytest

from crossfuse.config import FUSION_MODES, FusionConfig, load_config


def test_defaults():
    cfg = FusionConfig()
    assert cfg.audio.n_mfcc == 13 and cfg.train.lr == 1e-3 and cfg.train.batch_size == 8
    assert cfg.train.epochs == 50 and cfg.train.threshold == 0.5
    assert cfg.mode == "adaptive"


def test_json_roundtrip():
    cfg = load_config("desk")
    assert FusionConfig.from_dict(json.loads(cfg.to_json())) == cfg


def test_replace_nested_and_top_level():
    cfg = load_config("desk").replace(mode="concat", **{"train.epochs": 3})
    assert cfg.mode == "concat" and cfg.train.epochs == 3
    assert load_config("desk").train.epochs == 20


def test_single_direction_resolves():
    cfg = FusionConfig(mode="single_direction", direction="v2a")
    assert cfg.resolved_mode == "v2a"
    assert FusionConfig(mode="concat").resolved_mode == "concat"


def test_rejects_unknown_values():
    with pytest.raises(ValueError):
        FusionConfig(mode="late")
    with pytest.raises(ValueError):
        FusionConfig.from_dict({"audio": {"colour": 1}})


def test_file_with_preset_base(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"preset": "desk", "train": {"epochs": 2}}))
    cfg = load_config(str(path))
    assert cfg.train.epochs == 2 and cfg.train.lr == load_config("desk").train.lr
    assert cfg.audio.frames == load_config("desk").audio.frames


def test_modes_cover_ablation_rows():
    for m in ("adaptive", "mca_baseline", "concat", "single_direction", "no_selfattn", "no_residual"):
        assert m in FUSION_MODES
