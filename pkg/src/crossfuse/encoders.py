"""Unimodal encoders: 1D-CNN over MFCC frames, residual 3D-conv stack for
video clips, and a per-token projector for word-embedding sequences."""
from dataclasses import dataclass

from . import tensor as T
from .config import AudioConfig, SequenceConfig, VisualConfig
from .nn import BatchNorm, Conv1d, Conv3d, Dropout, Linear, Module
from .tensor import ShapeError

LAYOUTS = {
    "audio": ("batch", "coeffs", "frames"),
    "visual": ("batch", "channels", "frames", "height", "width"),
    "text": ("batch", "tokens", "embed_dim"),
    "sequence": ("batch", "tokens", "embed_dim"),
}


@dataclass
class ModalityFeatures:
    modality: str
    tensor: T.Tensor
    layout: str = None
    n_mfcc: int = 13

    def __post_init__(self):
        if self.modality not in ("audio", "visual", "text"):
            raise ValueError(f"unknown modality {self.modality!r}")
        if self.layout is None:
            self.layout = self.modality
        axes = LAYOUTS[self.layout]
        if self.tensor.ndim != len(axes):
            raise ShapeError(f"{self.modality} layout {axes} needs rank {len(axes)}, "
                             f"got shape {self.tensor.shape}")
        if self.layout == "audio" and self.tensor.shape[1] != self.n_mfcc:
            raise ShapeError(f"audio expects {self.n_mfcc} MFCC coefficients, got {self.tensor.shape[1]}")


def _unwrap(x):
    return x.tensor if isinstance(x, ModalityFeatures) else x


def audio_output_length(frames, cfg: AudioConfig):
    """Frames surviving conv -> conv -> pool -> conv, or <= 0 if too short."""
    k, p = cfg.kernel, cfg.padding
    n = frames + 2 * p - k + 1
    n = n + 2 * p - k + 1
    n = (n - cfg.pool) // cfg.pool + 1 if n >= cfg.pool else 0
    return n + 2 * p - k + 1


def audio_feature_dim(cfg: AudioConfig, frames=None):
    return cfg.channels[-1] * audio_output_length(frames or cfg.frames, cfg)


class AudioEncoder(Module):
    """conv-relu-BN, conv-relu, maxpool-BN-dropout, conv-relu-BN, flatten.

    The second convolution carries no batch norm, matching the layer
    recipe this encoder reproduces.
    """

    def __init__(self, cfg: AudioConfig, rng):
        super().__init__()
        self.cfg = cfg
        c1, c2, c3 = cfg.channels
        k, p = cfg.kernel, cfg.padding
        self.conv1 = Conv1d(cfg.n_mfcc, c1, k, rng, padding=p)
        self.bn1 = BatchNorm(c1)
        self.conv2 = Conv1d(c1, c2, k, rng, padding=p)
        self.bn2 = BatchNorm(c2)
        self.drop = Dropout(cfg.dropout, rng)
        self.conv3 = Conv1d(c2, c3, k, rng, padding=p)
        self.bn3 = BatchNorm(c3)

    def feature_map(self, x):
        x = _unwrap(x)
        if x.ndim != 3 or x.shape[1] != self.cfg.n_mfcc:
            raise ShapeError(f"audio input must be (batch, {self.cfg.n_mfcc}, frames), got {x.shape}")
        if audio_output_length(x.shape[2], self.cfg) < 1:
            raise ShapeError(f"{x.shape[2]} frames is too short for the kernel/pool chain")
        h = self.bn1(T.relu(self.conv1(x)))
        h = T.relu(self.conv2(h))
        h = self.drop(self.bn2(T.maxpool1d(h, self.cfg.pool)))
        return self.bn3(T.relu(self.conv3(h)))

    def forward(self, x):
        return T.flatten(self.feature_map(x), 1)


class VisualStage(Module):
    def __init__(self, c_in, c_out, stride, n_convs, groups, rng):
        super().__init__()
        self.n_convs = n_convs
        for i in range(n_convs):
            g = groups if i > 0 or c_in % groups == 0 else 1
            setattr(self, f"conv{i}", Conv3d(c_in if i == 0 else c_out, c_out, 3, rng,
                                             stride=stride if i == 0 else 1, padding=1, groups=g))
            setattr(self, f"bn{i}", BatchNorm(c_out))
        self.shortcut = (Conv3d(c_in, c_out, 1, rng, stride=stride)
                         if (c_in != c_out or stride != 1) else None)

    def forward(self, x):
        h = x
        for i in range(self.n_convs):
            h = T.relu(getattr(self, f"bn{i}")(getattr(self, f"conv{i}")(h)))
        return h + (self.shortcut(x) if self.shortcut is not None else x)


class VisualEncoder(Module):
    """Residual 3D-conv stack producing a (batch, C, S, H, W) feature map."""

    def __init__(self, cfg: VisualConfig, rng):
        super().__init__()
        self.cfg = cfg
        widths = (cfg.in_channels,) + tuple(cfg.stages)
        self.n_stages = len(cfg.stages)
        for i in range(self.n_stages):
            setattr(self, f"stage{i}", VisualStage(widths[i], widths[i + 1], cfg.stride,
                                                   cfg.convs_per_stage, cfg.groups, rng))

    def output_shape(self, frames=None, height=None, width=None):
        c = self.cfg
        div = c.stride ** self.n_stages
        dims = (frames or c.frames, height or c.height, width or c.width)
        return (c.stages[-1],) + tuple(d // div for d in dims)

    def forward(self, x):
        x = _unwrap(x)
        if x.ndim != 5 or x.shape[1] != self.cfg.in_channels:
            raise ShapeError(f"visual input must be (batch, {self.cfg.in_channels}, S, H, W), "
                             f"got {x.shape}")
        div = self.cfg.stride ** self.n_stages
        if any(d % div for d in x.shape[2:]):
            raise ShapeError(f"spatiotemporal extents {x.shape[2:]} not divisible by "
                             f"the stride chain ({div})")
        for i in range(self.n_stages):
            x = getattr(self, f"stage{i}")(x)
        return x


class SequenceEncoder(Module):
    """Per-token affine projection; token count is preserved."""

    def __init__(self, cfg: SequenceConfig, rng):
        super().__init__()
        self.cfg = cfg
        self.proj = Linear(cfg.embed_dim, cfg.width, rng)

    def forward(self, x):
        x = _unwrap(x)
        if x.ndim != 3 or x.shape[2] != self.cfg.embed_dim:
            raise ShapeError(f"sequence input must be (batch, tokens, {self.cfg.embed_dim}), "
                             f"got {x.shape}")
        return self.proj(x)


TextEncoder = SequenceEncoder


def audio_encode(x, encoder, training=False):
    encoder.train(training)
    return encoder(x)


def visual_encode(x, encoder, training=False):
    encoder.train(training)
    return encoder(x)


def text_encode(x, encoder):
    return encoder(x)


def audio_sequence(feature_map):
    """(B, C, L) audio map -> (B, L, C) sequence of frame vectors."""
    return T.transpose(feature_map, (0, 2, 1))


def visual_sequence(feature_map):
    """(B, C, S, H, W) map -> (B, S*H*W, C) sequence of location vectors."""
    b, c = feature_map.shape[:2]
    return T.transpose(T.reshape(feature_map, (b, c, -1)), (0, 2, 1))
