"""Gradient-check suites per package area, run at toy sizes in float64.

Each case returns a GradReport; outputs are scalarized by a weighted sum
with fixed random weights so that every output entry matters.
"""
import numpy as np

from . import tensor as T
from .attention import MCAFusion, TransformerLayer
from .config import AudioConfig, SequenceConfig
from .encoders import AudioEncoder, SequenceEncoder, VisualStage
from .fusion import AdaptiveBlock, fuse_gate, reinforce, select_features, trimodal_fuse
from .gradcheck import grad_check
from .model import Prediction, classify, cross_entropy, multilabel_loss, one_hot
from .nn import Linear, Module

PRIMITIVE_TOL = 1e-4
COMPOSITE_TOL = 1e-3


def _rng(seed=0):
    return np.random.default_rng(seed)


def _t(rng, *shape, scale=1.0):
    return T.Tensor(rng.normal(0, scale, size=shape))


def _case(name, fn, inputs, tol, seed=1):
    # fixed output weights, drawn once per case
    wrng = _rng(seed)
    cache = {}

    def f(*args):
        out = fn(*args)
        if "w" not in cache:
            cache["w"] = T.Tensor(wrng.normal(size=out.shape))
        return (out * cache["w"]).sum()

    return grad_check(f, inputs, tol, name)


def _module_case(name, module, fn, inputs, tol):
    module.astype(np.float64)
    params = module.parameters()
    return _case(name, lambda *args: fn(*args[:len(inputs)]), list(inputs) + params, tol)


# ---------------------------------------------------------------------------

def tensor_core_cases():
    r = _rng(10)
    cases = [
        _case("matmul", T.matmul, [_t(r, 2, 3, 4), _t(r, 4, 5)], PRIMITIVE_TOL),
        _case("softmax", lambda x: T.softmax(x, axis=1), [_t(r, 3, 5, 2)], PRIMITIVE_TOL),
        _case("log_softmax", lambda x: T.log_softmax(x, -1), [_t(r, 3, 6)], PRIMITIVE_TOL),
        _case("conv1d", lambda x, w, b: T.conv1d(x, w, b, stride=2, padding=1),
              [_t(r, 2, 3, 9), _t(r, 4, 3, 3), _t(r, 4)], PRIMITIVE_TOL),
        _case("conv3d", lambda x, w, b: T.conv3d(x, w, b, stride=(1, 2, 2), padding=1),
              [_t(r, 2, 2, 3, 4, 4), _t(r, 3, 2, 3, 3, 3), _t(r, 3)], PRIMITIVE_TOL),
        _case("maxpool1d", lambda x: T.maxpool1d(x, 2), [_t(r, 2, 3, 8)], PRIMITIVE_TOL),
        _case("flatten", lambda x: T.flatten(x, 1), [_t(r, 2, 3, 4)], PRIMITIVE_TOL),
        _case("concat", lambda a, b: T.concat([a, b], axis=1), [_t(r, 2, 3), _t(r, 2, 4)],
              PRIMITIVE_TOL),
        _case("broadcast_add", T.add, [_t(r, 2, 3), _t(r, 3)], PRIMITIVE_TOL),
        _case("elementwise_mul", T.mul, [_t(r, 2, 3, 4), _t(r, 1, 3, 1)], PRIMITIVE_TOL),
        _case("relu", T.relu, [_t(r, 4, 5)], PRIMITIVE_TOL),
        _case("tanh", T.tanh, [_t(r, 4, 5)], PRIMITIVE_TOL),
        _case("sigmoid", T.sigmoid, [_t(r, 4, 5)], PRIMITIVE_TOL),
        _case("softplus", T.softplus, [_t(r, 4, 5, scale=3)], PRIMITIVE_TOL),
        _case("layer_norm", T.layer_norm, [_t(r, 3, 6), _t(r, 6), _t(r, 6)], PRIMITIVE_TOL),
        _case("batch_norm[train]",
              lambda x, g, b: T.batch_norm(x, g, b, np.zeros(3), np.ones(3), True),
              [_t(r, 4, 3, 5), _t(r, 3), _t(r, 3)], PRIMITIVE_TOL),
        _case("batch_norm[eval]",
              lambda x, g, b: T.batch_norm(x, g, b, np.full(3, 0.2), np.full(3, 1.5), False),
              [_t(r, 4, 3, 5), _t(r, 3), _t(r, 3)], PRIMITIVE_TOL),
        _case("dropout", lambda x: T.dropout(x, 0.3, True, _rng(7)), [_t(r, 4, 6)], PRIMITIVE_TOL),
        _case("transpose+reshape", lambda x: T.reshape(T.transpose(x, (2, 0, 1)), (4, -1)),
              [_t(r, 2, 3, 4)], PRIMITIVE_TOL),
        _case("mean", lambda x: T.mean(x, axis=(0, 2), keepdims=True), [_t(r, 2, 3, 4)],
              PRIMITIVE_TOL),
        _case("div+pow+exp+log", lambda a, b: T.log(T.exp(a) + b ** 2) / (b * b + 1.0),
              [_t(r, 3, 4), _t(r, 3, 4)], PRIMITIVE_TOL),
        _case("composite conv1d>relu>layer_norm",
              lambda x, w, b: T.layer_norm(T.relu(T.conv1d(x, w, b, padding=1))),
              [_t(r, 2, 3, 8), _t(r, 4, 3, 3), _t(r, 4)], PRIMITIVE_TOL),
        _case("composite matmul>softmax>mul",
              lambda a, b, c: T.softmax(T.matmul(a, b), axis=-1) * c,
              [_t(r, 2, 3, 4), _t(r, 2, 4, 3), _t(r, 2, 3, 3)], PRIMITIVE_TOL),
        _case("composite conv3d>batch_norm>tanh>flatten",
              lambda x, w, g: T.flatten(T.tanh(T.batch_norm(T.conv3d(x, w, None, 2, 1), g,
                                                            T.Tensor(np.zeros(2)), np.zeros(2),
                                                            np.ones(2), True)), 1),
              [_t(r, 2, 2, 4, 4, 4), _t(r, 2, 2, 3, 3, 3), _t(r, 2)], PRIMITIVE_TOL),
    ]
    return cases


def encoder_cases():
    r = _rng(20)
    audio_cfg = AudioConfig(frames=12, channels=(4, 4, 4), dropout=0.0)
    enc = AudioEncoder(audio_cfg, r)
    stage = VisualStage(2, 3, 2, 1, 1, r)
    text = SequenceEncoder(SequenceConfig(tokens=3, embed_dim=5, width=4), r)
    return [
        _module_case("audio_encode", enc, enc, [_t(r, 3, 13, 12)], COMPOSITE_TOL),
        _module_case("visual stage", stage, stage, [_t(r, 2, 2, 2, 4, 4)], COMPOSITE_TOL),
        _module_case("text_encode", text, text, [_t(r, 2, 3, 5)], COMPOSITE_TOL),
    ]


def attention_cases():
    r = _rng(30)
    layer = TransformerLayer(8, 2, 2, r)
    cross = TransformerLayer(8, 2, 2, r)
    mca = MCAFusion(6, 4, 8, 1, 2, 2, r)
    return [
        _module_case("msa_layer", layer, layer, [_t(r, 2, 3, 8)], COMPOSITE_TOL),
        _module_case("cross_transformer_layer", cross, cross, [_t(r, 2, 3, 8), _t(r, 2, 4, 8)],
                     COMPOSITE_TOL),
        _module_case("mca_fusion", mca, mca, [_t(r, 2, 3, 6), _t(r, 2, 4, 4)], COMPOSITE_TOL),
    ]


def fusion_cases():
    r = _rng(40)
    sel = TransformerLayer(6, 2, 2, r)
    block = AdaptiveBlock(6, 4, r, select_dim=6, heads=2)
    block_vec = AdaptiveBlock(4, 5, r, select_dim=None, heads=2)
    at = AdaptiveBlock(3, 4, r, select_dim=4, heads=2)
    vt = AdaptiveBlock(5, 4, r, select_dim=4, heads=2)
    tri = Module()
    tri.at, tri.vt = at, vt
    cases = [
        _module_case("select_features", sel, lambda h: select_features(h, [sel]),
                     [_t(r, 2, 3, 6)], COMPOSITE_TOL),
        _case("fuse_gate", fuse_gate,
              [_t(r, 2, 5), _t(r, 2, 4, 2, 3, 3), _t(r, 4, 4), _t(r, 4), _t(r, 4, 5)],
              COMPOSITE_TOL),
        _case("reinforce", reinforce, [_t(r, 2, 4, 2, 2, 3), _t(r, 2, 4, 2, 2, 3)], COMPOSITE_TOL),
        _case("reinforce[no residual]", lambda g, x: reinforce(g, x, residual=False),
              [_t(r, 2, 4, 3), _t(r, 2, 4, 3)], COMPOSITE_TOL),
        _module_case("adaptive_block[map target]", block, block,
                     [_t(r, 2, 3, 6), _t(r, 2, 4, 2, 2, 2)], COMPOSITE_TOL),
        _module_case("adaptive_block[sequence target]", block_vec, block_vec,
                     [_t(r, 2, 4, 4), _t(r, 2, 5, 3)], COMPOSITE_TOL),
        _module_case("trimodal_fuse", tri,
                     lambda a, v, t: trimodal_fuse(a, v, t, at, vt).joint,
                     [_t(r, 2, 3, 3), _t(r, 2, 2, 5), _t(r, 2, 3, 4)], COMPOSITE_TOL),
    ]
    return cases


def model_cases():
    r = _rng(50)
    head = Linear(6, 4, r)
    y = one_hot(np.array([0, 3, 1]), 4, np.float64)
    yb = (r.random((3, 4)) < 0.5).astype(np.float64)
    head.astype(np.float64)
    params = head.parameters()

    def ce(x, *_):
        return cross_entropy(classify(x, head), y)

    def bce(x, *_):
        return multilabel_loss(classify(x, head, "multi_label"), yb)

    return [
        grad_check(ce, [_t(r, 3, 6)] + params, PRIMITIVE_TOL, "cross_entropy . classify"),
        grad_check(bce, [_t(r, 3, 6)] + params, PRIMITIVE_TOL, "multilabel_loss . classify"),
        grad_check(lambda z: multilabel_loss(Prediction(z, "multi_label"), yb),
                   [_t(r, 3, 4, scale=4)], PRIMITIVE_TOL, "multilabel_loss[logits]"),
    ]


SUITES = {
    "tensor_core": tensor_core_cases,
    "encoders": encoder_cases,
    "attention": attention_cases,
    "adaptive_fusion": fusion_cases,
    "model": model_cases,
}


def run_suite(name="all"):
    names = list(SUITES) if name == "all" else [name]
    reports = []
    for n in names:
        if n not in SUITES:
            raise KeyError(f"unknown grad-check module {n!r}; choose from {sorted(SUITES)} or 'all'")
        reports.extend(SUITES[n]())
    return reports
