"""Adaptive cross-modal fusion.

A source modality selects its own useful features with self-attention and
mean pooling. The selected vector and the target feature map are mapped
to a common channel space, summed, and squashed:

    gate = tanh(W_v x_V + b_v  (+)  W_a x_A)

where W_v acts on the channel axis at every location and (+) broadcasts
the per-sample vector W_a x_A over the target's positions. The target is
then reweighted channel-wise and kept through a residual path:

    out = softmax_channels(gate) * x_V + x_V

The gate width must equal the target channel count for the product to be
well formed, so blocks are built with k = C.
"""
from collections import OrderedDict
from dataclasses import dataclass, field

from . import tensor as T
from .attention import LayerStack, TransformerLayer
from .nn import Linear, Module, uniform_init, zeros_param
from .tensor import ShapeError


def select_features(h, selector=None):
    """Run the self-attention selector (if any) and mean-pool positions."""
    if selector is not None:
        for layer in selector:
            h = layer(h)
    return T.mean(h, axis=1)


def fuse_gate(x_a, x_v, w_v, b_v, w_a):
    """x_a: (B, d_f); x_v: (B, C, *positions) -> gate (B, k, *positions)."""
    k, c = w_v.shape
    if x_v.shape[1] != c:
        raise ShapeError(f"target has {x_v.shape[1]} channels, W_v expects {c}")
    if w_a.shape != (k, x_a.shape[-1]):
        raise ShapeError(f"selected vector width {x_a.shape[-1]} does not match W_a {w_a.shape}")
    nd = x_v.ndim
    to_last = (0,) + tuple(range(2, nd)) + (1,)
    back = (0, nd - 1) + tuple(range(1, nd - 1))
    target = T.matmul(T.transpose(x_v, to_last), T.transpose(w_v)) + b_v   # (B, *pos, k)
    source = T.matmul(x_a, T.transpose(w_a))                                # (B, k)
    source = T.reshape(source, (source.shape[0],) + (1,) * (nd - 2) + (k,))
    return T.transpose(T.tanh(target + source), back)


def reinforce(gate, x_v, residual=True):
    if gate.shape != x_v.shape:
        raise ShapeError(f"gate {gate.shape} and target {x_v.shape} differ; k must equal C")
    weighted = T.softmax(gate, axis=1) * x_v
    return weighted + x_v if residual else weighted


class AdaptiveBlock(Module):
    """Source sequence (B, n, d_src) reinforces a target map (B, C, *pos).

    ``select_dim`` projects the source before selection (None keeps the
    source width). ``self_attention=False`` drops the selector entirely,
    leaving projection + mean pooling.
    """

    def __init__(self, source_dim, target_channels, rng, select_dim=None, heads=2,
                 depth=1, mlp_ratio=2, self_attention=True, residual=True, k=None):
        super().__init__()
        if k is not None and k != target_channels:
            raise ValueError(f"gate width k={k} must equal target channels C={target_channels}")
        c = target_channels
        self.residual = residual
        self.proj = Linear(source_dim, select_dim, rng) if select_dim else None
        d = select_dim or source_dim
        self.selector = (LayerStack([TransformerLayer(d, heads, mlp_ratio, rng) for _ in range(depth)])
                         if self_attention and depth > 0 else None)
        self.w_v = uniform_init(rng, (c, c), c)
        self.b_v = zeros_param((c,))
        self.w_a = uniform_init(rng, (c, d), d)

    def select(self, source_seq):
        h = self.proj(source_seq) if self.proj is not None else source_seq
        return select_features(h, self.selector)

    def gate(self, source_seq, target_map):
        return fuse_gate(self.select(source_seq), target_map, self.w_v, self.b_v, self.w_a)

    def forward(self, source_seq, target_map):
        return reinforce(self.gate(source_seq, target_map), target_map, self.residual)


def adaptive_block(source_seq, target_map, block):
    return block(source_seq, target_map)


@dataclass
class FusedRepresentation:
    parts: OrderedDict = field(default_factory=OrderedDict)
    joint: T.Tensor = None

    @property
    def forward_av(self):
        return self.parts.get("a2v")

    @property
    def forward_va(self):
        return self.parts.get("v2a")


def bidirectional_fuse(audio_seq, audio_map, visual_seq, visual_map, block_av, block_va,
                       direction="both"):
    """Audio reinforces visual and visual reinforces audio; joint splices the
    flattened results as [v->a, a->v]. ``direction`` of "a2v" or "v2a"
    keeps one branch only."""
    parts = OrderedDict()
    if direction in ("both", "v2a"):
        parts["v2a"] = block_va(visual_seq, audio_map)
    if direction in ("both", "a2v"):
        parts["a2v"] = block_av(audio_seq, visual_map)
    if not parts:
        raise ValueError(f"unknown direction {direction!r}")
    joint = T.concat([T.flatten(p, 1) for p in parts.values()], axis=1)
    return FusedRepresentation(parts, joint)


def trimodal_fuse(audio_seq, visual_seq, text_seq, block_at, block_vt):
    """Audio and visual each reinforce text. Text (B, n, w) is treated as a
    (B, w, n) channel map; each reinforced map is mean-pooled over tokens."""
    text_map = T.transpose(text_seq, (0, 2, 1))
    parts = OrderedDict()
    parts["a2t"] = block_at(audio_seq, text_map)
    parts["v2t"] = block_vt(visual_seq, text_map)
    joint = T.concat([T.mean(p, axis=2) for p in parts.values()], axis=1)
    return FusedRepresentation(parts, joint)
