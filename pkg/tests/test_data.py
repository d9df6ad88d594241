import json
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from crossfuse.config import load_config
from crossfuse.data import (FEATURE_MAGIC, DuplicateIdError, FoldError, ManifestError,
                            MissingFeatureError, ShapeMismatchError, check_fold, fusion_latents,
                            generate_synthetic, load_dataset, make_folds, read_features,
                            write_dataset, write_features)


# -- feature files -----------------------------------------------------------

def test_feature_roundtrip(tmp_path, rng):
    arr = rng.normal(size=(3, 4, 5)).astype(np.float32)
    write_features(tmp_path / "f.bin", arr)
    back = read_features(tmp_path / "f.bin")
    assert back.dtype == np.float32
    np.testing.assert_array_equal(back, arr)


def test_feature_header_layout(tmp_path):
    write_features(tmp_path / "f.bin", np.zeros((2, 7)))
    blob = (tmp_path / "f.bin").read_bytes()
    assert blob[:4] == FEATURE_MAGIC
    assert struct.unpack_from("<III", blob, 4) == (2, 2, 7)
    assert len(blob) == 16 + 4 * 14


def test_feature_bad_magic_and_size(tmp_path):
    (tmp_path / "a.bin").write_bytes(b"JUNK" + bytes(8))
    with pytest.raises(ManifestError, match="magic"):
        read_features(tmp_path / "a.bin")
    write_features(tmp_path / "b.bin", np.zeros(4))
    (tmp_path / "b.bin").write_bytes((tmp_path / "b.bin").read_bytes()[:-4])
    with pytest.raises(ManifestError, match="payload"):
        read_features(tmp_path / "b.bin")


# -- manifests ---------------------------------------------------------------

def two_sample_manifest(tmp_path, rng):
    feats = {"audio": rng.normal(size=(2, 13, 10)).astype(np.float32),
             "visual": rng.normal(size=(2, 3, 2, 4, 4)).astype(np.float32)}
    return write_dataset(tmp_path, feats, [1, 0], [1, 2], "single_label", ["a", "b"], ["train", "test"])


def test_two_sample_manifest(tmp_path, rng):
    ds = load_dataset(two_sample_manifest(tmp_path, rng))
    assert len(ds) == 2 and ds.n_classes == 2
    assert ds.features["audio"].shape == (2, 13, 10)
    assert ds.features["visual"].shape == (2, 3, 2, 4, 4)
    assert ds.labels.tolist() == [1, 0]
    assert ds.indices("test").tolist() == [1]


def _edit(path, fn):
    doc = json.loads(path.read_text())
    fn(doc)
    path.write_text(json.dumps(doc))


def test_declared_shape_mismatch_names_sample(tmp_path, rng):
    path = two_sample_manifest(tmp_path, rng)
    _edit(path, lambda d: d["samples"][1]["features"]["audio"].update(shape=[13, 11]))
    with pytest.raises(ShapeMismatchError, match="s0001"):
        load_dataset(path)


def test_duplicate_id(tmp_path, rng):
    path = two_sample_manifest(tmp_path, rng)
    _edit(path, lambda d: d["samples"][1].update(id="s0000"))
    with pytest.raises(DuplicateIdError):
        load_dataset(path)


def test_missing_feature_file(tmp_path, rng):
    path = two_sample_manifest(tmp_path, rng)
    (tmp_path / "features" / "s0001_visual.bin").unlink()
    with pytest.raises(MissingFeatureError, match="s0001"):
        load_dataset(path)
    with pytest.raises(MissingFeatureError):
        load_dataset(tmp_path / "nope.json")


def test_error_kinds_are_distinct():
    kinds = {ShapeMismatchError, DuplicateIdError, MissingFeatureError}
    assert len(kinds) == 3
    assert not issubclass(ShapeMismatchError, DuplicateIdError)


def test_label_out_of_range(tmp_path, rng):
    path = two_sample_manifest(tmp_path, rng)
    _edit(path, lambda d: d["samples"][0].update(label=5))
    with pytest.raises(ManifestError, match="label"):
        load_dataset(path)


def test_samples_ordered_by_id(tmp_path, rng):
    path = two_sample_manifest(tmp_path, rng)
    _edit(path, lambda d: d["samples"].reverse())
    assert load_dataset(path).ids == ["s0000", "s0001"]


def test_full_size_manifest_balanced(tmp_path):
    cfg = load_config("desk").replace(**{"audio.frames": 12, "visual.frames": 2,
                                         "visual.height": 2, "visual.width": 2})
    ds = load_dataset(generate_synthetic(tmp_path, cfg, 1440, 8, seed=0))
    assert len(ds) == 1440 and ds.n_classes == 8
    assert np.bincount(ds.labels).tolist() == [180] * 8
    assert np.bincount(ds.actors)[1:].tolist() == [60] * 24
    for a in range(1, 25):
        assert np.bincount(ds.labels[ds.actors == a], minlength=8).min() >= 7


def test_multilabel_manifest(multilabel_manifest):
    path, cfg = multilabel_manifest
    ds = load_dataset(path)
    assert ds.task == "multi_label" and ds.labels.shape == (40, 4)
    assert set(np.unique(ds.labels)) <= {0, 1}
    counts = {s: len(ds.indices(s)) for s in ("train", "valid", "test")}
    assert sum(counts.values()) == 40
    assert counts["train"] > counts["test"] > 0 and counts["valid"] > 0


# -- folds -------------------------------------------------------------------

def test_fold_zero():
    f = make_folds(range(1, 25))[0]
    assert f.test_actors == (1, 2, 3, 4) and len(f.train_actors) == 20


def test_every_fold_valid():
    folds = make_folds(range(1, 25))
    assert [f.fold_index for f in folds] == list(range(5))
    for f in folds:
        assert check_fold(f, range(1, 25)) == []


def test_fold_coverage():
    tested = [a for f in make_folds(range(1, 25)) for a in f.test_actors]
    assert sorted(tested) == list(range(1, 21))
    assert not set(tested) & {21, 22, 23, 24}


def test_fold_wrong_actor_count():
    with pytest.raises(FoldError):
        make_folds(range(1, 24))


def test_check_fold_flags_overlap():
    f = make_folds(range(1, 25))[0]
    bad = type(f)(0, (1, 3, 5, 7), f.train_actors + (5,))
    problems = check_fold(bad, range(1, 25))
    assert any("overlap" in p for p in problems)
    assert any("even" in p for p in problems)


def test_fold_indices_follow_actors(small_manifest):
    ds = load_dataset(small_manifest)
    test = ds.indices("test", fold=1)
    assert set(ds.actors[test]) == {5, 6, 7, 8}
    assert not set(ds.actors[ds.indices("train", fold=1)]) & {5, 6, 7, 8}


# -- synthetic latents -------------------------------------------------------

@given(st.sampled_from([2, 4, 8, 16]), st.integers(0, 2 ** 31))
def test_latents_reconstruct_label(n_classes, seed):
    r = np.random.default_rng(seed)
    labels = r.integers(n_classes, size=30)
    a, v = fusion_latents(labels, n_classes, r)
    n_bits = int(np.log2(n_classes))
    for y, ac, vc in zip(labels, a, v):
        bits = [ac[0] ^ vc[0]] + [(ac if j % 2 == 0 else vc)[1 + j // 2] for j in range(n_bits - 1)]
        assert int("".join(map(str, bits)), 2) == y


def test_latent_xor_bit_hidden_from_each_modality():
    r = np.random.default_rng(0)
    labels = np.arange(4000) % 8
    a, v = fusion_latents(labels, 8, r)
    top = labels >> 2
    for code in (a[:, 0], v[:, 0]):
        # the private bit is independent of the top label bit
        assert abs(np.mean(code[top == 1]) - np.mean(code[top == 0])) < 0.05


def test_latents_need_power_of_two():
    with pytest.raises(ValueError):
        fusion_latents([0, 1], 6, np.random.default_rng(0))


def test_generator_deterministic(tmp_path, desk):
    p1 = generate_synthetic(tmp_path / "a", desk, 24, seed=3)
    p2 = generate_synthetic(tmp_path / "b", desk, 24, seed=3)
    assert p1.read_text() == p2.read_text()
    for f in (tmp_path / "a" / "features").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / "features" / f.name).read_bytes()
