"""Feature files, dataset manifests, actor folds and the synthetic generator.

Feature file layout (little-endian):

    b"XFEA" | u32 rank | u32 extents[rank] | f32 data (row-major)

A manifest is JSON::

    {"format": "crossfuse-manifest", "version": 1,
     "task": "single_label" | "multi_label",
     "class_names": [...],
     "modalities": {"audio": {"layout": "audio"}, ...},
     "samples": [{"id": "s0001", "actor": 3, "split": "train",
                  "label": 2  (or "labels": [0, 1, 0, 0]),
                  "features": {"audio": {"path": "...", "shape": [13, 60]}, ...}}]}

Feature paths are resolved relative to the manifest's directory.
"""
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FEATURE_MAGIC = b"XFEA"


class ManifestError(ValueError):
    pass


class ShapeMismatchError(ManifestError):
    pass


class DuplicateIdError(ManifestError):
    pass


class MissingFeatureError(FileNotFoundError):
    pass


class FoldError(ValueError):
    pass


def write_features(path, arr):
    arr = np.ascontiguousarray(arr, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def read_features(path):
    blob = Path(path).read_bytes()
    if blob[:4] != FEATURE_MAGIC:
        raise ManifestError(f"{path}: not a feature file (bad magic)")
    (rank,) = struct.unpack_from("<I", blob, 4)
    shape = struct.unpack_from(f"<{rank}I", blob, 8)
    off = 8 + 4 * rank
    count = int(np.prod(shape))
    if len(blob) - off != 4 * count:
        raise ManifestError(f"{path}: payload size does not match header shape {shape}")
    return np.frombuffer(blob, dtype="<f4", count=count, offset=off).reshape(shape).astype(np.float32)


@dataclass
class Dataset:
    task: str
    class_names: list
    ids: list
    actors: np.ndarray
    labels: np.ndarray            # (N,) ints or (N, n_classes) binary
    features: dict                # modality -> (N, ...) float32
    splits: list = field(default_factory=list)

    def __len__(self):
        return len(self.ids)

    @property
    def n_classes(self):
        return len(self.class_names)

    def batch(self, idx):
        from .tensor import Tensor
        out = {m: Tensor(a[idx]) for m, a in self.features.items()}
        return out, self.labels[idx]

    def indices(self, split=None, fold=None):
        """Sample indices for a named split, optionally under an actor fold.

        With ``fold`` set, "train"/"test" follow the actor rotation.
        Otherwise the per-sample "split" field is used ("all" selects all).
        """
        n = len(self.ids)
        if split in (None, "all"):
            return np.arange(n)
        if fold is not None:
            spec = make_folds(sorted(set(int(a) for a in self.actors)))[fold]
            actors = spec.test_actors if split == "test" else spec.train_actors
            return np.flatnonzero(np.isin(self.actors, actors))
        if not self.splits or any(s is None for s in self.splits):
            raise ManifestError("manifest has no per-sample split field; pass a fold")
        return np.flatnonzero(np.array(self.splits) == split)


def load_manifest(path):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise MissingFeatureError(f"manifest not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ManifestError(f"{path}: invalid JSON ({e})") from None
    for key in ("task", "class_names", "samples"):
        if key not in doc:
            raise ManifestError(f"{path}: missing key {key!r}")
    return doc


def load_dataset(manifest_path):
    """Load every sample's features and check them against the manifest."""
    manifest_path = Path(manifest_path)
    doc = load_manifest(manifest_path)
    root = manifest_path.parent
    task = doc["task"]
    classes = list(doc["class_names"])
    samples = sorted(doc["samples"], key=lambda s: s["id"])
    seen = set()
    for s in samples:
        if s["id"] in seen:
            raise DuplicateIdError(f"duplicate sample id {s['id']!r}")
        seen.add(s["id"])
    modalities = list(doc.get("modalities") or samples[0]["features"].keys())

    feats = {m: [] for m in modalities}
    labels = []
    for s in samples:
        for m in modalities:
            entry = s["features"].get(m)
            if entry is None:
                raise ManifestError(f"sample {s['id']}: no {m} features")
            fpath = root / entry["path"]
            if not fpath.exists():
                raise MissingFeatureError(f"sample {s['id']}: missing {m} feature file {fpath}")
            arr = read_features(fpath)
            if list(arr.shape) != list(entry["shape"]):
                raise ShapeMismatchError(f"sample {s['id']}: {m} declared shape {list(entry['shape'])} "
                                         f"but file holds {list(arr.shape)}")
            feats[m].append(arr)
        if task == "multi_label":
            lab = np.asarray(s["labels"], dtype=np.int64)
            if lab.shape != (len(classes),) or not np.all((lab == 0) | (lab == 1)):
                raise ManifestError(f"sample {s['id']}: labels must be a 0/1 vector of length {len(classes)}")
        else:
            lab = int(s["label"])
            if not 0 <= lab < len(classes):
                raise ManifestError(f"sample {s['id']}: label {lab} outside {len(classes)} classes")
        labels.append(lab)

    for m in modalities:
        shapes = {a.shape for a in feats[m]}
        if len(shapes) > 1:
            raise ShapeMismatchError(f"{m} features have inconsistent shapes {sorted(shapes)}")
    return Dataset(
        task=task,
        class_names=classes,
        ids=[s["id"] for s in samples],
        actors=np.array([int(s.get("actor", 0)) for s in samples]),
        labels=np.array(labels),
        features={m: np.stack(v) for m, v in feats.items()},
        splits=[s.get("split") for s in samples],
    )


# ---------------------------------------------------------------------------
# actor folds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FoldSpec:
    fold_index: int
    test_actors: tuple
    train_actors: tuple


def make_folds(actors, n_folds=5, window=4):
    """Fold i tests actors 4i+1..4i+4 and trains on the other 20.

    Five windows of four consecutive IDs cover actors 1-20; actors 21-24
    are always in the training set.
    """
    actors = sorted(int(a) for a in actors)
    if actors != list(range(1, 25)):
        raise FoldError(f"expected actor IDs 1..24 exactly, got {len(actors)} IDs: {actors}")
    folds = []
    for i in range(n_folds):
        test = tuple(range(window * i + 1, window * i + window + 1))
        train = tuple(a for a in actors if a not in test)
        folds.append(FoldSpec(i, test, train))
    return folds


def check_fold(spec, actors):
    """Return a list of violated fold invariants (empty when valid)."""
    problems = []
    test, train = set(spec.test_actors), set(spec.train_actors)
    if test & train:
        problems.append("test and train actors overlap")
    if test | train != set(actors):
        problems.append("test and train do not cover every actor")
    if len(test) != 4 or len(train) != 20:
        problems.append(f"split sizes {len(train)}/{len(test)} are not 20/4")
    evens = sum(1 for a in test if a % 2 == 0)
    if evens != 2 or len(test) - evens != 2:
        problems.append("test set is not 2 even + 2 odd actor IDs")
    return problems


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

def _latent_bits(y, n_bits):
    return [(y >> (n_bits - 1 - i)) & 1 for i in range(n_bits)]


def fusion_latents(labels, n_classes, rng):
    """Split each label into audio and visual codes that need both modalities.

    The top label bit is the XOR of one hidden audio bit and one hidden
    visual bit; remaining bits go alternately to audio and visual. No
    single modality, and no sum of per-modality scores, recovers the XOR
    bit.
    """
    n_bits = int(round(np.log2(n_classes)))
    if 2 ** n_bits != n_classes or n_bits < 1:
        raise ValueError(f"synthetic fusion data needs a power-of-two class count, got {n_classes}")
    audio, visual = [], []
    for y in labels:
        bits = _latent_bits(int(y), n_bits)
        p = int(rng.integers(2))
        q = p ^ bits[0]
        a_code, v_code = [p], [q]
        for j, b in enumerate(bits[1:]):
            (a_code if j % 2 == 0 else v_code).append(b)
        audio.append(a_code)
        visual.append(v_code)
    return np.array(audio), np.array(visual)


def _code_patterns(rng, n_codes_bits, shape, scale):
    """One random +-scale template per (bit position, bit value)."""
    return rng.normal(0, scale, size=(n_codes_bits, 2) + tuple(shape)).astype(np.float32)


def synth_single_label(n_samples, n_classes, seed, audio_shape, visual_shape,
                       n_actors=24, noise=0.5, signal=1.0, test_fraction=None):
    """Class-conditional Gaussian audio/visual features with balanced classes
    and actors. Returns dict with features, labels, actors, splits."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n_samples) % n_classes
    per_actor = int(np.ceil(n_samples / n_actors))
    actors = np.arange(n_samples) // per_actor + 1
    a_code, v_code = fusion_latents(labels, n_classes, rng)
    a_pat = _code_patterns(rng, a_code.shape[1], audio_shape, signal)
    v_pat = _code_patterns(rng, v_code.shape[1], visual_shape, signal)
    audio = rng.normal(0, noise, size=(n_samples,) + tuple(audio_shape)).astype(np.float32)
    visual = rng.normal(0, noise, size=(n_samples,) + tuple(visual_shape)).astype(np.float32)
    for j in range(a_code.shape[1]):
        audio += a_pat[j, a_code[:, j]]
    for j in range(v_code.shape[1]):
        visual += v_pat[j, v_code[:, j]]
    splits = None
    if test_fraction:
        order = rng.permutation(n_samples)
        n_test = int(round(test_fraction * n_samples))
        splits = np.array(["train"] * n_samples, dtype=object)
        splits[order[:n_test]] = "test"
    return {"audio": audio, "visual": visual}, labels, actors, splits


def synth_multi_label(n_samples, n_classes, seed, shapes, noise=1.0, signal=1.0,
                      split_ratio=(2717, 798, 938)):
    """Independent binary labels; every sequence modality carries a weak
    token-level signature of each active label."""
    rng = np.random.default_rng(seed)
    labels = (rng.random((n_samples, n_classes)) < 0.35).astype(np.int64)
    feats = {}
    for m, shape in shapes.items():
        pat = rng.normal(0, signal, size=(n_classes,) + tuple(shape)).astype(np.float32)
        x = rng.normal(0, noise, size=(n_samples,) + tuple(shape)).astype(np.float32)
        x += np.einsum("nc,c...->n...", labels.astype(np.float32), pat)
        feats[m] = x
    cuts = np.cumsum(split_ratio)[:-1] / np.sum(split_ratio) * n_samples
    order = rng.permutation(n_samples)
    splits = np.empty(n_samples, dtype=object)
    for name, part in zip(("train", "valid", "test"), np.split(order, cuts.astype(int))):
        splits[part] = name
    actors = np.zeros(n_samples, dtype=np.int64)
    return feats, labels, actors, splits


def write_dataset(out_dir, features, labels, actors, task, class_names, splits=None):
    """Write feature files plus manifest.json; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "features").mkdir(parents=True, exist_ok=True)
    width = max(4, len(str(len(labels))))
    samples = []
    for i in range(len(labels)):
        sid = f"s{i:0{width}d}"
        entry = {"id": sid, "actor": int(actors[i]), "features": {}}
        if splits is not None:
            entry["split"] = str(splits[i])
        if task == "multi_label":
            entry["labels"] = [int(v) for v in labels[i]]
        else:
            entry["label"] = int(labels[i])
        for m, arr in features.items():
            rel = f"features/{sid}_{m}.bin"
            write_features(out_dir / rel, arr[i])
            entry["features"][m] = {"path": rel, "shape": list(arr[i].shape)}
        samples.append(entry)
    layouts = {m: ("sequence" if task == "multi_label" and m != "text" else m) for m in features}
    doc = {"format": "crossfuse-manifest", "version": 1, "task": task,
           "class_names": list(class_names),
           "modalities": {m: {"layout": layouts[m]} for m in features},
           "samples": samples}
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(doc, indent=1))
    return path


RAVDESS_CLASSES = ["neutral", "calm", "happy", "sad", "angry", "fearful", "disgust", "surprised"]
IEMOCAP_CLASSES = ["neutral", "happy", "sad", "angry"]


def generate_synthetic(out_dir, cfg, n_samples, n_classes=None, seed=0, n_actors=24,
                       test_fraction=None, noise=None, signal=None):
    """Write a synthetic dataset shaped for ``cfg`` and return the manifest path.

    ``noise``/``signal`` default to 1.0/0.3 for multi-label data and
    0.5/1.0 for single-label data.
    """
    n_classes = n_classes or cfg.n_classes
    if cfg.task == "multi_label":
        shapes = {"audio": (cfg.audio_seq.tokens, cfg.audio_seq.embed_dim),
                  "visual": (cfg.visual_seq.tokens, cfg.visual_seq.embed_dim),
                  "text": (cfg.text.tokens, cfg.text.embed_dim)}
        feats, labels, actors, splits = synth_multi_label(
            n_samples, n_classes, seed, shapes, 1.0 if noise is None else noise,
            0.3 if signal is None else signal)
        names = (IEMOCAP_CLASSES if n_classes == 4 else [f"class{i}" for i in range(n_classes)])
    else:
        a_shape = (cfg.audio.n_mfcc, cfg.audio.frames)
        v_shape = (cfg.visual.in_channels, cfg.visual.frames, cfg.visual.height, cfg.visual.width)
        feats, labels, actors, splits = synth_single_label(
            n_samples, n_classes, seed, a_shape, v_shape, n_actors, 0.5 if noise is None else noise,
            1.0 if signal is None else signal, test_fraction)
        names = (RAVDESS_CLASSES if n_classes == 8 else [f"class{i}" for i in range(n_classes)])
    return write_dataset(out_dir, feats, labels, actors, cfg.task, names, splits)
