"""Dense tensors with reverse-mode automatic differentiation.

Every op allocates a fresh output. An output gets a tape node only when
gradients are enabled and at least one input requires grad, so constants
never enter the backward graph.
"""
from contextlib import contextmanager

import numpy as np

from . import _kernels


class ShapeError(ValueError):
    pass


_GRAD_ENABLED = True


@contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled():
    return _GRAD_ENABLED


class Node:
    """One tape record: the inputs of an op and its local backward rule.

    ``backward`` maps the output gradient to a tuple of input gradients
    (``None`` for inputs that need none).
    """
    __slots__ = ("parents", "backward", "op")

    def __init__(self, parents, backward, op):
        self.parents = parents
        self.backward = backward
        self.op = op


class Tensor:
    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is not None:
            arr = np.array(data, dtype=dtype)
        elif isinstance(data, np.ndarray) and data.dtype.kind == "f":
            arr = data
        elif isinstance(data, np.floating):
            # 0-d results of ndarray arithmetic arrive as numpy scalars
            arr = np.asarray(data)
        else:
            arr = np.array(data, dtype=np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node = None
        self.name = name

    # -- introspection -----------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{tag})"

    def __len__(self):
        return len(self.data)

    # -- operators -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    # -- method sugar ----------------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def relu(self):
        return relu(self)

    def tanh(self):
        return tanh(self)

    def backward(self):
        backward(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _pair(a, b):
    # python scalars adopt the dtype of the tensor operand
    if not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    return a, b


def _result(data, parents, backward_fn, op):
    req = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=req)
    if req:
        out.node = Node(parents, backward_fn, op)
    return out


def unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        t, done = stack.pop()
        if done:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for p in t.node.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
    return order


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise RuntimeError("loss does not require grad; nothing to differentiate")
    grads = {id(loss): np.ones_like(loss.data)}
    for t in reversed(_topo_order(loss)):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t.node is None:
            t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        for p, pg in zip(t.node.parents, t.node.backward(g)):
            if pg is None or not p.requires_grad:
                continue
            prev = grads.get(id(p))
            grads[id(p)] = pg if prev is None else prev + pg


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = _pair(a, b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b),
                   lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)), "add")


broadcast_add = add


def sub(a, b):
    a, b = _pair(a, b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _result(a.data - b.data, (a, b),
                   lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb)), "sub")


def mul(a, b):
    a, b = _pair(a, b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b),
                   lambda g: (unbroadcast(g * bd, ad.shape), unbroadcast(g * ad, bd.shape)), "mul")


elementwise_mul = mul


def div(a, b):
    a, b = _pair(a, b)
    _check_broadcast(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd
    return _result(out, (a, b),
                   lambda g: (unbroadcast(g / bd, ad.shape),
                              unbroadcast(-g * out / bd, bd.shape)), "div")


def neg(x):
    return _result(-x.data, (x,), lambda g: (-g,), "neg")


def power(x, p):
    xd = x.data
    return _result(xd ** p, (x,), lambda g: (g * p * xd ** (p - 1),), "pow")


def exp(x):
    out = np.exp(x.data)
    return _result(out, (x,), lambda g: (g * out,), "exp")


def log(x):
    xd = x.data
    return _result(np.log(xd), (x,), lambda g: (g / xd,), "log")


def relu(x):
    mask = x.data > 0  # relu'(0) = 0
    return _result(np.where(mask, x.data, 0).astype(x.dtype), (x,),
                   lambda g: (g * mask,), "relu")


def tanh(x):
    out = np.tanh(x.data)
    return _result(out, (x,), lambda g: (g * (1 - out * out),), "tanh")


def sigmoid(x):
    out = _sigmoid(x.data)
    return _result(out, (x,), lambda g: (g * out * (1 - out),), "sigmoid")


def _sigmoid(z):
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1 / (1 + e), e / (1 + e)).astype(z.dtype)


def softplus(x):
    """log(1 + exp(x)), evaluated without overflow."""
    xd = x.data
    out = np.maximum(xd, 0) + np.log1p(np.exp(-np.abs(xd)))
    return _result(out, (x,), lambda g: (g * _sigmoid(xd),), "softplus")


def pointwise(x, kind):
    if kind == "relu":
        return relu(x)
    if kind == "tanh":
        return tanh(x)
    raise ValueError(f"unknown pointwise kind {kind!r}")


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return None
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    out = []
    for a in axes:
        if not -ndim <= a < ndim:
            raise ValueError(f"axis {a} out of range for rank {ndim}")
        out.append(a % ndim)
    return tuple(out)


def tsum(x, axis=None, keepdims=False):
    axes = _norm_axis(axis, x.ndim)
    shape = x.shape

    def bw(g):
        if axes is not None and not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(np.asarray(x.data.sum(axis=axes, keepdims=keepdims)), (x,), bw, "sum")


def mean(x, axis=None, keepdims=False):
    axes = _norm_axis(axis, x.ndim)
    n = x.size if axes is None else int(np.prod([x.shape[a] for a in axes]))
    return tsum(x, axes, keepdims) * (1.0 / n)


def reshape(x, shape):
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {old} to {tuple(shape)}") from None
    return _result(out, (x,), lambda g: (g.reshape(old),), "reshape")


def flatten(x, from_axis=1):
    from_axis = from_axis % x.ndim
    return reshape(x, x.shape[:from_axis] + (-1,))


def transpose(x, axes=None):
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = np.argsort(axes)
    return _result(np.transpose(x.data, axes), (x,),
                   lambda g: (np.transpose(g, inv),), "transpose")


def swapaxes(x, a, b):
    axes = list(range(x.ndim))
    axes[a], axes[b] = axes[b], axes[a]
    return transpose(x, tuple(axes))


def getitem(x, idx):
    shape, dtype = x.shape, x.dtype

    def bw(g):
        gx = np.zeros(shape, dtype=dtype)
        np.add.at(gx, idx, g)
        return (gx,)

    return _result(x.data[idx], (x,), bw, "getitem")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat of an empty list")
    ref = tensors[0]
    axis = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(
                t.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != axis):
            raise ShapeError(f"concat axis {axis}: shapes {ref.shape} and {t.shape} do not conform")
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    return _result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
                   lambda g: tuple(np.split(g, cuts, axis=axis)), "concat")


# ---------------------------------------------------------------------------
# linear algebra and softmax
# ---------------------------------------------------------------------------

def matmul(a, b):
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast") from None
    ad, bd = a.data, b.data

    def bw(g):
        ga = unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        gb = unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _result(ad @ bd, (a, b), bw, "matmul")


def softmax(x, axis=-1):
    axis = _norm_axis(axis, x.ndim)[0]
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    return _result(out, (x,),
                   lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),), "softmax")


def log_softmax(x, axis=-1):
    axis = _norm_axis(axis, x.ndim)[0]
    z = x.data - x.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
    return _result(out, (x,),
                   lambda g: (g - np.exp(out) * g.sum(axis=axis, keepdims=True),), "log_softmax")


# ---------------------------------------------------------------------------
# convolution and pooling
# ---------------------------------------------------------------------------

def _triple(v):
    return tuple(v) if isinstance(v, (tuple, list)) else (v, v, v)


def conv1d(x, w, b=None, stride=1, padding=0):
    """Cross-correlation over the last axis. x: (B, Cin, L), w: (Cout, Cin, K)."""
    if x.ndim != 3 or w.ndim != 3:
        raise ShapeError(f"conv1d expects (B,C,L) and (O,C,K), got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv1d: input channels {x.shape} vs kernel {w.shape}")
    k = w.shape[2]
    if k > x.shape[2] + 2 * padding:
        raise ShapeError(f"conv1d: kernel size {k} exceeds padded length {x.shape[2] + 2 * padding}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    out = _kernels.conv1d_fwd(xp, w.data, stride)
    wd = w.data

    def bw(g):
        gx, gw = _kernels.conv1d_bwd(xp, wd, g, stride)
        if padding:
            gx = gx[:, :, padding:-padding]
        return gx, gw

    y = _result(out, (x, w), bw, "conv1d")
    if b is not None:
        y = y + reshape(b, (1, -1, 1))
    return y


def conv3d(x, w, b=None, stride=1, padding=0, groups=1):
    """Cross-correlation over the last three axes. x: (B, Cin, D, H, W)."""
    if x.ndim != 5 or w.ndim != 5:
        raise ShapeError(f"conv3d expects rank-5 input and kernel, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1] * groups or w.shape[0] % groups:
        raise ShapeError(f"conv3d: input {x.shape} and kernel {w.shape} do not match groups={groups}")
    stride, padding = _triple(stride), _triple(padding)
    for ax in range(3):
        if w.shape[2 + ax] > x.shape[2 + ax] + 2 * padding[ax]:
            raise ShapeError(f"conv3d: kernel {w.shape[2:]} exceeds padded input {x.shape[2:]}")
    if groups > 1:
        ci, co = w.shape[1], w.shape[0] // groups
        parts = [conv3d(x[:, g * ci:(g + 1) * ci], w[g * co:(g + 1) * co], None, stride, padding)
                 for g in range(groups)]
        y = concat(parts, axis=1)
    else:
        pad = ((0, 0), (0, 0)) + tuple((p, p) for p in padding)
        xp = np.pad(x.data, pad) if any(padding) else x.data
        wd = w.data

        def bw(g):
            gx, gw = _kernels.conv3d_bwd(xp, wd, g, stride)
            if any(padding):
                sl = (slice(None), slice(None)) + tuple(
                    slice(p, gx.shape[2 + i] - p) for i, p in enumerate(padding))
                gx = gx[sl]
            return gx, gw

        y = _result(_kernels.conv3d_fwd(xp, wd, stride), (x, w), bw, "conv3d")
    if b is not None:
        y = y + reshape(b, (1, -1, 1, 1, 1))
    return y


def maxpool1d(x, k, stride=None):
    stride = stride or k
    if x.ndim != 3:
        raise ShapeError(f"maxpool1d expects (B,C,L), got {x.shape}")
    if k > x.shape[2]:
        raise ShapeError(f"maxpool1d: window {k} exceeds length {x.shape[2]}")
    out, idx = _kernels.maxpool1d_fwd(x.data, k, stride)
    shape = x.shape
    return _result(out, (x,), lambda g: (_kernels.maxpool1d_bwd(shape, idx, g, stride),), "maxpool1d")


# ---------------------------------------------------------------------------
# normalization and dropout
# ---------------------------------------------------------------------------

EPS = 1e-5


def layer_norm(x, gamma=None, beta=None, eps=EPS):
    """Normalize over the last axis with population variance."""
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    var = xd.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv
    n = xd.shape[-1]
    gd = gamma.data if gamma is not None else None
    out = xhat * gd if gd is not None else xhat
    if beta is not None:
        out = out + beta.data
    parents = (x,) + tuple(t for t in (gamma, beta) if t is not None)

    def bw(g):
        lead = tuple(range(g.ndim - 1))
        dxhat = g * gd if gd is not None else g
        gx = inv / n * (n * dxhat - dxhat.sum(-1, keepdims=True)
                        - xhat * (dxhat * xhat).sum(-1, keepdims=True))
        grads = [gx]
        if gamma is not None:
            grads.append((g * xhat).sum(axis=lead))
        if beta is not None:
            grads.append(g.sum(axis=lead))
        return tuple(grads)

    return _result(out.astype(xd.dtype, copy=False), parents, bw, "layer_norm")


def batch_norm(x, gamma, beta, running_mean, running_var, training,
               momentum=0.1, eps=EPS):
    """Per-channel normalization over every axis except axis 1.

    In training mode batch statistics are used and the running buffers
    (plain ndarrays) are updated in place; the running variance takes the
    unbiased estimate. Eval mode uses the running buffers.
    """
    xd = x.data
    red = (0,) + tuple(range(2, xd.ndim))
    bshape = (1, -1) + (1,) * (xd.ndim - 2)
    if training:
        n = xd.size // xd.shape[1]
        mu = xd.mean(axis=red)
        var = xd.var(axis=red)
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * var * (n / max(n - 1, 1))
    else:
        mu, var = running_mean, running_var
    inv = (1.0 / np.sqrt(var + eps)).reshape(bshape)
    xhat = (xd - mu.reshape(bshape)) * inv
    gd = gamma.data.reshape(bshape)
    out = (xhat * gd + beta.data.reshape(bshape)).astype(xd.dtype, copy=False)

    def bw(g):
        dxhat = g * gd
        if training:
            gx = inv / n * (n * dxhat - dxhat.sum(axis=red, keepdims=True)
                            - xhat * (dxhat * xhat).sum(axis=red, keepdims=True))
        else:
            gx = dxhat * inv
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return _result(out, (x, gamma, beta), bw, "batch_norm")


def dropout(x, p, training, rng):
    """Inverted dropout: survivors are scaled by 1/(1-p) at train time."""
    if not 0 <= p < 1:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1 - p)
    return _result(x.data * keep, (x,), lambda g: (g * keep,), "dropout")
