"""End-to-end models, classification head, losses and parameter accounting."""
import io
import json
import struct
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import MCAFusion
from .config import FusionConfig
from .encoders import (AudioEncoder, SequenceEncoder, VisualEncoder, audio_output_length,
                       audio_sequence, visual_sequence)
from .fusion import AdaptiveBlock, FusedRepresentation, bidirectional_fuse, trimodal_fuse
from .nn import Linear, Module
from .tensor import ShapeError


@dataclass
class Prediction:
    logits: T.Tensor
    task: str = "single_label"

    @property
    def probabilities(self):
        z = self.logits.data
        if self.task == "multi_label":
            return T._sigmoid(z)
        e = np.exp(z - z.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)

    def labels(self, threshold=0.5):
        if self.task == "multi_label":
            return (self.probabilities >= threshold).astype(np.int64)
        return self.logits.data.argmax(axis=-1)


def classify(joint, head, task="single_label"):
    if joint.shape[-1] != head.d_in:
        raise ShapeError(f"joint width {joint.shape[-1]} does not match head input {head.d_in}")
    return Prediction(head(joint), task)


def cross_entropy(pred, y):
    """Mean over the batch of -log p(true class), from logits."""
    y = np.asarray(y.data if isinstance(y, T.Tensor) else y)
    if y.shape != pred.logits.shape or not np.all((y == 0) | (y == 1)) or not np.all(y.sum(-1) == 1):
        raise ValueError("cross_entropy needs one-hot targets matching the logits shape")
    logp = T.log_softmax(pred.logits, axis=-1)
    onehot = T.Tensor(y.astype(logp.dtype))
    return -(logp * onehot).sum() * (1.0 / y.shape[0])


def multilabel_loss(pred, y):
    """Mean binary cross-entropy over every (sample, class) cell.

    Uses softplus(z) - z*y, which is log(1+e^z) - z*y without overflow.
    """
    y = np.asarray(y.data if isinstance(y, T.Tensor) else y)
    if y.shape != pred.logits.shape:
        raise ShapeError(f"targets {y.shape} vs logits {pred.logits.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("multi-label targets must be 0 or 1")
    z = pred.logits
    yt = T.Tensor(y.astype(z.dtype))
    return T.mean(T.softplus(z) - z * yt)


def one_hot(idx, n, dtype=np.float32):
    out = np.zeros((len(idx), n), dtype=dtype)
    out[np.arange(len(idx)), idx] = 1
    return out


def param_count(params, prefix=""):
    """Element count over parameters whose name starts with ``prefix``.

    ``params`` is a Module or an iterable of (name, tensor) pairs.
    """
    items = params.named_parameters() if isinstance(params, Module) else params
    return sum(int(p.size) for name, p in items if name.startswith(prefix))


class AudioVisualModel(Module):
    """Audio + video classifier. Parameter prefixes: ``encoder.audio``,
    ``encoder.visual``, ``fusion`` and ``head``."""

    def __init__(self, cfg: FusionConfig, rng):
        super().__init__()
        self.cfg = cfg
        self.mode = cfg.resolved_mode
        self.encoder = Module()
        self.encoder.audio = AudioEncoder(cfg.audio, rng)
        self.encoder.visual = VisualEncoder(cfg.visual, rng)
        a_ch = cfg.audio.channels[-1]
        a_len = audio_output_length(cfg.audio.frames, cfg.audio)
        v_shape = self.encoder.visual.output_shape()
        v_ch = v_shape[0]
        a_flat, v_flat = a_ch * a_len, int(np.prod(v_shape))
        ad = cfg.adaptive

        def block(src, tgt, **kw):
            return AdaptiveBlock(src, tgt, rng, select_dim=ad.select_dim, heads=ad.select_heads,
                                 depth=ad.select_depth, mlp_ratio=ad.mlp_ratio, **kw)

        at = cfg.attention
        kw = {"self_attention": self.mode != "no_selfattn", "residual": self.mode != "no_residual"}
        use_va = self.mode in ("adaptive", "no_selfattn", "no_residual", "v2a")
        use_av = self.mode in ("adaptive", "no_selfattn", "no_residual", "a2v")
        if self.mode == "concat":
            d_joint = a_flat + v_flat
        elif self.mode == "mca_baseline":
            d_joint = 2 * at.model_dim
        else:
            d_joint = a_flat * use_va + v_flat * use_av
        self.d_joint = d_joint
        # head before fusion: for one seed every non-fusion parameter is
        # drawn identically whatever the fusion mode
        self.head = Linear(d_joint, cfg.n_classes, rng)
        self.fusion = Module()
        if self.mode == "mca_baseline":
            self.fusion.mca = MCAFusion(a_ch, v_ch, at.model_dim, at.depth, at.heads,
                                        at.mlp_ratio, rng)
        if use_va:
            self.fusion.va = block(v_ch, a_ch, **kw)
        if use_av:
            self.fusion.av = block(a_ch, v_ch, **kw)

    def fuse(self, audio, visual):
        a_map = self.encoder.audio.feature_map(audio)
        v_map = self.encoder.visual(visual)
        if self.mode == "concat":
            joint = T.concat([T.flatten(a_map, 1), T.flatten(v_map, 1)], axis=1)
            return FusedRepresentation(joint=joint)
        a_seq, v_seq = audio_sequence(a_map), visual_sequence(v_map)
        if self.mode == "mca_baseline":
            return FusedRepresentation(joint=self.fusion.mca(a_seq, v_seq))
        direction = {"a2v": "a2v", "v2a": "v2a"}.get(self.mode, "both")
        return bidirectional_fuse(a_seq, a_map, v_seq, v_map,
                                  getattr(self.fusion, "av", None), getattr(self.fusion, "va", None),
                                  direction)

    def forward(self, batch):
        fused = self.fuse(batch["audio"], batch["visual"])
        return classify(fused.joint, self.head, self.cfg.task)


class TrimodalModel(Module):
    """Audio, visual and text token sequences; audio and visual each
    reinforce text through an adaptive block."""

    def __init__(self, cfg: FusionConfig, rng):
        super().__init__()
        self.cfg = cfg
        self.mode = cfg.resolved_mode
        if self.mode not in ("adaptive", "concat", "no_selfattn", "no_residual"):
            raise ValueError(f"mode {self.mode!r} is not available for the trimodal model")
        self.encoder = Module()
        self.encoder.audio = SequenceEncoder(cfg.audio_seq, rng)
        self.encoder.visual = SequenceEncoder(cfg.visual_seq, rng)
        self.encoder.text = SequenceEncoder(cfg.text, rng)
        w = cfg.text.width
        ad = cfg.adaptive
        d_joint = w + cfg.audio_seq.width + cfg.visual_seq.width if self.mode == "concat" else 2 * w
        self.d_joint = d_joint
        self.head = Linear(d_joint, cfg.n_classes, rng)
        self.fusion = Module()
        if self.mode != "concat":
            kw = dict(select_dim=ad.select_dim, heads=ad.select_heads, depth=ad.select_depth,
                      mlp_ratio=ad.mlp_ratio, self_attention=self.mode != "no_selfattn",
                      residual=self.mode != "no_residual")
            self.fusion.at = AdaptiveBlock(cfg.audio_seq.width, w, rng, **kw)
            self.fusion.vt = AdaptiveBlock(cfg.visual_seq.width, w, rng, **kw)

    def fuse(self, audio, visual, text):
        a = self.encoder.audio(audio)
        v = self.encoder.visual(visual)
        t = self.encoder.text(text)
        if self.mode == "concat":
            joint = T.concat([T.mean(t, 1), T.mean(a, 1), T.mean(v, 1)], axis=1)
            return FusedRepresentation(joint=joint)
        return trimodal_fuse(a, v, t, self.fusion.at, self.fusion.vt)

    def forward(self, batch):
        fused = self.fuse(batch["audio"], batch["visual"], batch["text"])
        return classify(fused.joint, self.head, self.cfg.task)


def build_model(cfg: FusionConfig, seed=0):
    rng = np.random.default_rng(seed)
    cls = TrimodalModel if cfg.modalities == "avt" else AudioVisualModel
    model = cls(cfg, rng)
    model.rng = rng
    return model


def loss_fn(pred, labels, task):
    if task == "multi_label":
        return multilabel_loss(pred, labels)
    return cross_entropy(pred, one_hot(np.asarray(labels), pred.logits.shape[-1],
                                       pred.logits.dtype))


# ---------------------------------------------------------------------------
# checkpoint container
#
#   b"XFCK" | u32 version | u32 meta_len | meta (utf-8 JSON) | u32 n_records
#   per record: u32 name_len | name | u32 rank | u32 extents... | f32 LE data
# ---------------------------------------------------------------------------

CKPT_MAGIC = b"XFCK"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps_checkpoint(state, meta=None):
    buf = io.BytesIO()
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode()
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<II", CKPT_VERSION, len(meta_bytes)))
    buf.write(meta_bytes)
    buf.write(struct.pack("<I", len(state)))
    for name, arr in state.items():
        nb = name.encode()
        arr = np.asarray(arr)
        buf.write(struct.pack("<I", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


def loads_checkpoint(blob):
    if blob[:4] != CKPT_MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    try:
        state, meta, off = _parse_records(blob)
    except CheckpointError:
        raise
    except (struct.error, ValueError, UnicodeDecodeError) as e:
        raise CheckpointError(f"truncated or corrupt checkpoint: {e}") from None
    if off != len(blob):
        raise CheckpointError(f"{len(blob) - off} trailing bytes in checkpoint")
    return state, meta


def _parse_records(blob):
    version, meta_len = struct.unpack_from("<II", blob, 4)
    if version != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off = 12
    meta = json.loads(blob[off:off + meta_len].decode())
    off += meta_len
    (n,) = struct.unpack_from("<I", blob, off)
    off += 4
    state = {}
    for _ in range(n):
        (ln,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off:off + ln].decode()
        off += ln
        (rank,) = struct.unpack_from("<I", blob, off)
        off += 4
        shape = struct.unpack_from(f"<{rank}I", blob, off)
        off += 4 * rank
        count = int(np.prod(shape))
        state[name] = np.frombuffer(blob, dtype="<f4", count=count, offset=off).reshape(shape).copy()
        off += 4 * count
    return state, meta, off


def save_checkpoint(path, model, meta=None):
    meta = dict(meta or {})
    meta.setdefault("config", model.cfg.to_dict())
    blob = dumps_checkpoint(model.state(), meta)
    with open(path, "wb") as fh:
        fh.write(blob)
    return blob


def load_checkpoint(path):
    """Rebuild the model stored at ``path``; returns (model, meta)."""
    with open(path, "rb") as fh:
        state, meta = loads_checkpoint(fh.read())
    cfg = FusionConfig.from_dict(meta["config"])
    model = build_model(cfg)
    model.load_state(state)
    return model, meta
