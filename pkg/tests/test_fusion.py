import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from crossfuse import tensor as T
from crossfuse.attention import TransformerLayer
from crossfuse.fusion import (AdaptiveBlock, adaptive_block, bidirectional_fuse, fuse_gate,
                              reinforce, select_features, trimodal_fuse)
from crossfuse.gradcheck import grad_check
from crossfuse.tensor import ShapeError, Tensor


def loop_reinforce(gate, x, residual=True):
    """Scalar-loop evaluation of softmax-over-channels(gate) * x (+ x)."""
    out = np.zeros_like(x)
    b, c = x.shape[:2]
    for n in range(b):
        for pos in itertools.product(*map(range, x.shape[2:])):
            col = [gate[(n, k) + pos] for k in range(c)]
            top = max(col)
            e = [math.exp(v - top) for v in col]
            z = sum(e)
            for k in range(c):
                val = e[k] / z * x[(n, k) + pos]
                out[(n, k) + pos] = val + x[(n, k) + pos] if residual else val
    return out


def tiled_gate(x_a, x_v, w_v, b_v, w_a):
    """Gate with the broadcast made explicit: W_a x_A tiled over positions."""
    b, c = x_v.shape[:2]
    pos = x_v.shape[2:]
    k = w_v.shape[0]
    src = x_a @ w_a.T                                        # (b, k)
    tiled = np.repeat(src.reshape(b, k, -1), int(np.prod(pos)), axis=2).reshape((b, k) + pos)
    tgt = np.einsum("kc,bc...->bk...", w_v, x_v) + b_v.reshape((1, k) + (1,) * len(pos))
    return np.tanh(tgt + tiled)


def f64(m):
    return m.astype(np.float64)


# -- selection ---------------------------------------------------------------

def test_select_zero_value_path_is_mean(rng):
    layer = f64(TransformerLayer(6, 2, 2, rng))
    for lin in (layer.attn.v, layer.mlp.fc2):
        lin.w.data[...] = 0
        lin.b.data[...] = 0
    h = Tensor(rng.normal(size=(2, 4, 6)))
    np.testing.assert_allclose(select_features(h, [layer]).data, h.data.mean(1), atol=1e-12)


def test_select_single_position(rng):
    layer = f64(TransformerLayer(6, 2, 2, rng))
    h = Tensor(rng.normal(size=(2, 1, 6)))
    np.testing.assert_allclose(select_features(h, [layer]).data, layer(h).data[:, 0], atol=1e-12)


def test_select_grad_check(rng):
    layer = f64(TransformerLayer(6, 2, 2, rng))
    rep = grad_check(lambda h: select_features(h, [layer]).sum(), Tensor(rng.normal(size=(2, 3, 6))),
                     1e-3)
    assert rep.passed, rep


# -- gate --------------------------------------------------------------------

def test_gate_zero_params_is_zero(rng):
    g = fuse_gate(Tensor(rng.normal(size=(2, 5))), Tensor(rng.normal(size=(2, 3, 2, 2, 2))),
                  Tensor(np.zeros((3, 3))), Tensor(np.zeros(3)), Tensor(np.zeros((3, 5))))
    assert g.shape == (2, 3, 2, 2, 2) and not g.data.any()


def test_gate_independent_of_audio_when_wa_zero(rng):
    xv = Tensor(rng.normal(size=(2, 3, 2, 2, 2)))
    w_v, b_v, w_a = Tensor(rng.normal(size=(3, 3))), Tensor(rng.normal(size=3)), Tensor(np.zeros((3, 5)))
    g1 = fuse_gate(Tensor(rng.normal(size=(2, 5))), xv, w_v, b_v, w_a).data
    g2 = fuse_gate(Tensor(rng.normal(size=(2, 5)) * 10), xv, w_v, b_v, w_a).data
    np.testing.assert_array_equal(g1, g2)


def test_gate_matches_tiling_oracle(rng):
    x_a, x_v = rng.normal(size=(2, 5)), rng.normal(size=(2, 3, 2, 3, 2))
    w_v, b_v, w_a = rng.normal(size=(3, 3)), rng.normal(size=3), rng.normal(size=(3, 5))
    g = fuse_gate(*map(Tensor, (x_a, x_v, w_v, b_v, w_a))).data
    np.testing.assert_allclose(g, tiled_gate(x_a, x_v, w_v, b_v, w_a), atol=1e-12)


def test_gate_shape_errors(rng):
    with pytest.raises(ShapeError):
        fuse_gate(Tensor(np.ones((1, 5))), Tensor(np.ones((1, 4, 2))), Tensor(np.ones((3, 3))),
                  Tensor(np.ones(3)), Tensor(np.ones((3, 5))))
    with pytest.raises(ShapeError):
        fuse_gate(Tensor(np.ones((1, 6))), Tensor(np.ones((1, 3, 2))), Tensor(np.ones((3, 3))),
                  Tensor(np.ones(3)), Tensor(np.ones((3, 5))))


# -- reinforce ---------------------------------------------------------------

def test_reinforce_zero_gate(rng):
    x = rng.normal(size=(2, 4, 2, 2, 2))
    out = reinforce(Tensor(np.zeros_like(x)), Tensor(x)).data
    np.testing.assert_allclose(out, x * (1 + 1 / 4), atol=1e-12)


def test_reinforce_oracle_and_decomposition(rng):
    g, x = rng.normal(size=(2, 3, 2, 3, 2)), rng.normal(size=(2, 3, 2, 3, 2))
    out = reinforce(Tensor(g), Tensor(x)).data
    np.testing.assert_allclose(out, loop_reinforce(g, x), atol=1e-12)
    np.testing.assert_allclose(out - x, T.softmax(Tensor(g), axis=1).data * x, atol=1e-12)


def test_reinforce_without_residual(rng):
    g, x = rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 3, 4))
    np.testing.assert_allclose(reinforce(Tensor(g), Tensor(x), residual=False).data,
                               loop_reinforce(g, x, residual=False), atol=1e-12)


shapes = st.tuples(st.integers(1, 2), st.integers(1, 4), st.integers(1, 3), st.integers(1, 3))


@given(shapes, st.floats(0.1, 20), st.integers(0, 2 ** 31))
def test_reinforce_properties(shape, scale, seed):
    r = np.random.default_rng(seed)
    g, x = r.normal(0, scale, size=shape), r.normal(size=shape)
    out = reinforce(Tensor(g), Tensor(x)).data
    sm = T.softmax(Tensor(g), axis=1).data
    assert out.shape == x.shape
    assert ((sm > 0) & (sm <= 1)).all()
    np.testing.assert_allclose(sm.sum(1), 1.0, atol=1e-6)
    np.testing.assert_allclose(out - x, sm * x, atol=1e-6)
    assert (np.abs(out) <= 2 * np.abs(x) + 1e-12).all()


@given(st.integers(1, 4), st.integers(1, 5), st.floats(0.1, 50), st.integers(0, 2 ** 31))
def test_gate_bounded(c, d, scale, seed):
    r = np.random.default_rng(seed)
    g = fuse_gate(Tensor(r.normal(0, scale, size=(2, d))), Tensor(r.normal(size=(2, c, 3))),
                  Tensor(r.normal(size=(c, c))), Tensor(r.normal(size=c)),
                  Tensor(r.normal(size=(c, d)))).data
    assert (np.abs(g) <= 1).all()


def test_reinforce_requires_k_equals_c():
    with pytest.raises(ShapeError):
        reinforce(Tensor(np.zeros((1, 3, 2))), Tensor(np.zeros((1, 4, 2))))


# -- the block ---------------------------------------------------------------

def test_block_rejects_k_not_c(rng):
    with pytest.raises(ValueError, match="k=5"):
        AdaptiveBlock(6, 4, rng, k=5)
    AdaptiveBlock(6, 4, rng, k=4)


def test_block_preserves_visual_shape(rng):
    block = AdaptiveBlock(6, 4, rng, select_dim=8, heads=2)
    tgt = Tensor(rng.normal(size=(2, 4, 2, 3, 3)).astype(np.float32))
    assert adaptive_block(Tensor(rng.normal(size=(2, 5, 6)).astype(np.float32)), tgt, block).shape \
        == tgt.shape


def test_block_without_self_attention(rng):
    full = AdaptiveBlock(6, 4, np.random.default_rng(3), select_dim=8, heads=2)
    bare = AdaptiveBlock(6, 4, np.random.default_rng(3), select_dim=8, heads=2,
                         self_attention=False)
    assert bare.selector is None
    src = Tensor(rng.normal(size=(2, 5, 6)).astype(np.float32))
    tgt = Tensor(rng.normal(size=(2, 4, 3)).astype(np.float32))
    bare.w_v.data[...], bare.w_a.data[...] = full.w_v.data, full.w_a.data
    bare.proj.w.data[...] = full.proj.w.data
    a, b = full(src, tgt), bare(src, tgt)
    assert a.shape == b.shape
    assert not np.allclose(a.data, b.data)
    np.testing.assert_allclose(bare.select(src).data, bare.proj(src).data.mean(1), atol=1e-6)


def test_block_grad_both_inputs(rng):
    block = f64(AdaptiveBlock(6, 3, rng, select_dim=4, heads=2))
    rep = grad_check(lambda s, t: block(s, t).sum(),
                     [Tensor(rng.normal(size=(2, 3, 6))), Tensor(rng.normal(size=(2, 3, 2, 2, 2)))],
                     1e-3)
    assert rep.passed, rep


def test_source_sensitivity(rng):
    block = f64(AdaptiveBlock(6, 3, rng, select_dim=4, heads=2))
    src = Tensor(rng.normal(size=(2, 3, 6)), requires_grad=True)
    tgt = Tensor(rng.normal(size=(2, 3, 2, 2)))
    w = Tensor(rng.normal(size=(2, 3, 2, 2)))
    (block(src, tgt) * w).sum().backward()
    assert np.abs(src.grad).max() > 1e-6
    block.w_a.data[...] = 0
    src.grad = None
    (block(src, tgt) * w).sum().backward()
    assert np.abs(src.grad).max() == 0


# -- composition -------------------------------------------------------------

def make_bidirectional(rng):
    av = AdaptiveBlock(5, 3, rng, select_dim=4, heads=2)     # audio seq (C_a=5) -> visual map
    va = AdaptiveBlock(3, 5, rng, select_dim=4, heads=2)     # visual seq (C_v=3) -> audio map
    a_map = Tensor(rng.normal(size=(2, 5, 6)).astype(np.float32))
    v_map = Tensor(rng.normal(size=(2, 3, 2, 2, 2)).astype(np.float32))
    a_seq = T.transpose(a_map, (0, 2, 1))
    v_seq = T.transpose(T.reshape(v_map, (2, 3, -1)), (0, 2, 1))
    return av, va, a_seq, a_map, v_seq, v_map


def test_bidirectional_joint_width(rng):
    av, va, a_seq, a_map, v_seq, v_map = make_bidirectional(rng)
    fused = bidirectional_fuse(a_seq, a_map, v_seq, v_map, av, va)
    assert list(fused.parts) == ["v2a", "a2v"]
    assert fused.forward_va.shape == a_map.shape and fused.forward_av.shape == v_map.shape
    assert fused.joint.shape[1] == 5 * 6 + 3 * 8


@pytest.mark.parametrize("direction", ["a2v", "v2a"])
def test_single_direction_joint(rng, direction):
    av, va, a_seq, a_map, v_seq, v_map = make_bidirectional(rng)
    fused = bidirectional_fuse(a_seq, a_map, v_seq, v_map, av, va, direction)
    part = fused.parts[direction]
    np.testing.assert_array_equal(fused.joint.data, part.data.reshape(2, -1))


def test_bidirectional_eval_deterministic(rng):
    av, va, a_seq, a_map, v_seq, v_map = make_bidirectional(rng)
    av.eval(), va.eval()
    a = bidirectional_fuse(a_seq, a_map, v_seq, v_map, av, va).joint.data
    b = bidirectional_fuse(a_seq, a_map, v_seq, v_map, av, va).joint.data
    np.testing.assert_array_equal(a, b)


def test_trimodal_zero_gates(rng):
    at = AdaptiveBlock(3, 4, rng, select_dim=4, heads=2)
    vt = AdaptiveBlock(5, 4, rng, select_dim=4, heads=2)
    for blk in (at, vt):
        for p in (blk.w_v, blk.b_v, blk.w_a):
            p.data[...] = 0
    text = rng.normal(size=(2, 6, 4)).astype(np.float32)
    fused = trimodal_fuse(Tensor(rng.normal(size=(2, 3, 3)).astype(np.float32)),
                          Tensor(rng.normal(size=(2, 2, 5)).astype(np.float32)), Tensor(text),
                          at, vt)
    pooled = text.mean(1) * (1 + 1 / 4)
    assert fused.joint.shape == (2, 8)
    np.testing.assert_allclose(fused.joint.data, np.concatenate([pooled, pooled], 1), rtol=1e-6)


def test_trimodal_grad_check(rng):
    at = f64(AdaptiveBlock(3, 4, rng, select_dim=4, heads=2))
    vt = f64(AdaptiveBlock(5, 4, rng, select_dim=4, heads=2))
    rep = grad_check(lambda a, v, t: trimodal_fuse(a, v, t, at, vt).joint.sum(),
                     [Tensor(rng.normal(size=(2, 3, 3))), Tensor(rng.normal(size=(2, 2, 5))),
                      Tensor(rng.normal(size=(2, 3, 4)))], 1e-3)
    assert rep.passed, rep
