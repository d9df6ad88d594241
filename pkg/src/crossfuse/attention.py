"""Multi-head attention and the pre-norm transformer layers built on it.

No positional encoding is added anywhere, so every layer here is
equivariant to permutations of the query positions.
"""
import numpy as np

from . import tensor as T
from .nn import LayerNorm, Linear, Module
from .tensor import ShapeError


def split_heads(x, heads):
    b, n, d = x.shape
    return T.transpose(T.reshape(x, (b, n, heads, d // heads)), (0, 2, 1, 3))


def merge_heads(x):
    b, h, n, dh = x.shape
    return T.reshape(T.transpose(x, (0, 2, 1, 3)), (b, n, h * dh))


def scaled_dot_attention(q, k, v, heads=1):
    """Softmax(q k^T / sqrt(head_dim)) v per head.

    q: (b, n_q, d); k, v: (b, n_k, d). Returns the merged (b, n_q, d)
    output and the (b, heads, n_q, n_k) weights.
    """
    if q.shape[-1] != k.shape[-1] or k.shape != v.shape or q.shape[0] != k.shape[0]:
        raise ShapeError(f"attention: q {q.shape}, k {k.shape}, v {v.shape} do not conform")
    d = q.shape[-1]
    if d % heads:
        raise ShapeError(f"model dim {d} not divisible by {heads} heads")
    qh, kh, vh = split_heads(q, heads), split_heads(k, heads), split_heads(v, heads)
    scores = T.matmul(qh, T.swapaxes(kh, -1, -2)) * (1.0 / np.sqrt(d // heads))
    weights = T.softmax(scores, axis=-1)
    return merge_heads(T.matmul(weights, vh)), weights


class MultiHeadAttention(Module):
    """Attention(W_Q x, W_K y, W_V y) followed by the output projection W_O."""

    def __init__(self, dim, heads, rng):
        super().__init__()
        if dim % heads:
            raise ValueError(f"model dim {dim} not divisible by {heads} heads")
        self.dim, self.heads = dim, heads
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng)
        self.v = Linear(dim, dim, rng)
        self.o = Linear(dim, dim, rng)
        self.last_weights = None

    def forward(self, x, y=None):
        y = x if y is None else y
        if x.shape[-1] != self.dim or y.shape[-1] != self.dim:
            raise ShapeError(f"attention expects width {self.dim}, got {x.shape} and {y.shape}")
        out, w = scaled_dot_attention(self.q(x), self.k(y), self.v(y), self.heads)
        self.last_weights = w.data  # plain array, so it is never taken for a parameter
        return self.o(out)


class MLP(Module):
    def __init__(self, dim, ratio, rng):
        super().__init__()
        self.fc1 = Linear(dim, dim * ratio, rng)
        self.fc2 = Linear(dim * ratio, dim, rng)

    def forward(self, x):
        return self.fc2(T.relu(self.fc1(x)))


class TransformerLayer(Module):
    """Pre-norm layer: y = Attn(LN(h), LN(src)) + h; out = MLP(LN(y)) + y.

    With ``source`` omitted this is the self-attention layer; with a
    source sequence it is the cross-modal layer (queries from ``h``).
    Both sides share the first layer norm, so a layer fed the same
    sequence twice is exactly its self-attention form.
    """

    def __init__(self, dim, heads, mlp_ratio, rng):
        super().__init__()
        self.ln1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.ln2 = LayerNorm(dim)
        self.mlp = MLP(dim, mlp_ratio, rng)

    def forward(self, h, source=None):
        hn = self.ln1(h)
        sn = hn if source is None else self.ln1(source)
        y = self.attn(hn, sn) + h
        return self.mlp(self.ln2(y)) + y


def msa_layer(h, layer):
    return layer(h)


def cross_transformer_layer(h_target, h_source, layer):
    if h_target.shape[-1] != h_source.shape[-1]:
        raise ShapeError(f"model dims differ: target {h_target.shape}, source {h_source.shape}")
    return layer(h_target, h_source)


class LayerStack(Module):
    def __init__(self, layers):
        super().__init__()
        self.n = len(layers)
        for i, layer in enumerate(layers):
            setattr(self, str(i), layer)

    def __iter__(self):
        return (getattr(self, str(i)) for i in range(self.n))

    def __len__(self):
        return self.n


def mca_fusion(h_a, h_v, layers_a, layers_v):
    """Stacked cross-transformer layers in both directions, then mean-pool
    each reinforced sequence and concatenate [audio, visual]."""
    for la, lv in zip(layers_a, layers_v):
        h_a, h_v = cross_transformer_layer(h_a, h_v, la), cross_transformer_layer(h_v, h_a, lv)
    return T.concat([T.mean(h_a, axis=1), T.mean(h_v, axis=1)], axis=1)


class MCAFusion(Module):
    """Cross-modal attention baseline: project each modality's sequence to a
    common width, run L cross layers per direction, pool and concatenate."""

    def __init__(self, audio_dim, visual_dim, model_dim, depth, heads, mlp_ratio, rng):
        super().__init__()
        self.proj_a = Linear(audio_dim, model_dim, rng)
        self.proj_v = Linear(visual_dim, model_dim, rng)
        self.layers_a = LayerStack([TransformerLayer(model_dim, heads, mlp_ratio, rng)
                                    for _ in range(depth)])
        self.layers_v = LayerStack([TransformerLayer(model_dim, heads, mlp_ratio, rng)
                                    for _ in range(depth)])
        self.out_dim = 2 * model_dim

    def forward(self, seq_a, seq_v):
        return mca_fusion(self.proj_a(seq_a), self.proj_v(seq_v), self.layers_a, self.layers_v)
