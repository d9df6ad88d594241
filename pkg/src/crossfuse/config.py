"""Architecture and training hyperparameters.

The defaults are pragmatic desk-scale choices; nothing here is dictated
by a reference setup. Configs serialize to flat JSON via ``to_dict``.
"""
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

FUSION_MODES = ("adaptive", "mca_baseline", "concat", "single_direction",
                "a2v", "v2a", "no_selfattn", "no_residual")


@dataclass
class AudioConfig:
    n_mfcc: int = 13
    frames: int = 60
    channels: tuple = (32, 64, 128)
    kernel: int = 3
    pool: int = 2
    dropout: float = 0.25
    padding: int = 0


@dataclass
class VisualConfig:
    in_channels: int = 3
    frames: int = 8
    height: int = 16
    width: int = 16
    # stage widths: in_channels -> stages[0] -> stages[1] ...
    stages: tuple = (32, 64, 128)
    stride: int = 2
    convs_per_stage: int = 2
    groups: int = 1


@dataclass
class SequenceConfig:
    """Per-token projector used for text (and sequence-form audio/visual)."""
    tokens: int = 20
    embed_dim: int = 300
    width: int = 128


@dataclass
class AttentionConfig:
    model_dim: int = 64
    heads: int = 4
    depth: int = 2
    mlp_ratio: int = 2


@dataclass
class AdaptiveConfig:
    # width the source sequence is projected to before self-attention selection
    select_dim: int = 16
    select_heads: int = 2
    select_depth: int = 1
    mlp_ratio: int = 2


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 8
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    threshold: float = 0.5


@dataclass
class FusionConfig:
    task: str = "single_label"          # single_label | multi_label
    modalities: str = "av"               # av (bimodal) | avt (trimodal, text target)
    mode: str = "adaptive"
    direction: str = "a2v"               # used when mode == single_direction
    n_classes: int = 8
    audio: AudioConfig = field(default_factory=AudioConfig)
    visual: VisualConfig = field(default_factory=VisualConfig)
    text: SequenceConfig = field(default_factory=SequenceConfig)
    # trimodal audio/visual inputs arrive as token sequences of fixed width
    audio_seq: SequenceConfig = field(default_factory=lambda: SequenceConfig(20, 74, 32))
    visual_seq: SequenceConfig = field(default_factory=lambda: SequenceConfig(20, 35, 32))
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    adaptive: AdaptiveConfig = field(default_factory=AdaptiveConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.mode not in FUSION_MODES:
            raise ValueError(f"unknown fusion mode {self.mode!r}; choose from {FUSION_MODES}")
        if self.task not in ("single_label", "multi_label"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.modalities not in ("av", "avt"):
            raise ValueError(f"unknown modality set {self.modalities!r}")

    @property
    def resolved_mode(self):
        return self.direction if self.mode == "single_direction" else self.mode

    def to_dict(self):
        return asdict(self)

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        return _build(cls, d)

    def replace(self, **changes):
        d = self.to_dict()
        for k, v in changes.items():
            section, _, key = k.partition(".")
            if key:
                d[section][key] = v
            else:
                d[k] = v
        return FusionConfig.from_dict(d)


def _build(cls, d):
    kwargs = {}
    names = {f.name: f for f in fields(cls)}
    for k, v in d.items():
        if k not in names:
            raise ValueError(f"unknown config key {k!r} for {cls.__name__}")
        default = names[k].default_factory() if callable(names[k].default_factory) else names[k].default
        if is_dataclass(default):
            kwargs[k] = _build(type(default), v)
        elif isinstance(v, list):
            kwargs[k] = tuple(v)
        else:
            kwargs[k] = v
    return cls(**kwargs)


PRESETS = {
    "default": {},
    # compact configuration for the synthetic ablation and CLI smoke runs
    "desk": {
        "audio": {"frames": 24, "channels": [8, 16, 32], "dropout": 0.1},
        "visual": {"frames": 4, "height": 8, "width": 8, "stages": [8, 16],
                   "convs_per_stage": 1},
        "adaptive": {"select_dim": 16, "select_heads": 2},
        "attention": {"model_dim": 16, "heads": 2, "depth": 1},
        "train": {"epochs": 20, "batch_size": 16, "lr": 3e-3},
    },
    "iemocap": {
        "task": "multi_label", "modalities": "avt", "n_classes": 4,
        "text": {"tokens": 20, "embed_dim": 300, "width": 32},
    },
}


def load_config(source=None):
    """Build a config from a preset name, a JSON file path, or None."""
    if source is None:
        return FusionConfig()
    if source in PRESETS:
        return FusionConfig.from_dict(PRESETS[source])
    path = Path(source)
    data = json.loads(path.read_text())
    base = data.pop("preset", None)
    if base:
        merged = _merge(PRESETS[base], data)
        return FusionConfig.from_dict(merged)
    return FusionConfig.from_dict(data)


def _merge(a, b):
    out = dict(a)
    for k, v in b.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out
