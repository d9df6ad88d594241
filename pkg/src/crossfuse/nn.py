"""Parameter containers and the small layers everything else is built from."""
from collections import OrderedDict

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Holds learnable tensors, buffers and child modules in insertion order.

    Parameter names are dotted paths ("encoder.audio.conv1.w"), so the
    iteration order is deterministic and checkpoint records are stable.
    """

    def __init__(self):
        object.__setattr__(self, "_params", OrderedDict())
        object.__setattr__(self, "_buffers", OrderedDict())
        object.__setattr__(self, "_children", OrderedDict())
        object.__setattr__(self, "training", True)

    def __setattr__(self, key, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[key] = value
        elif isinstance(value, Module):
            self._children[key] = value
        object.__setattr__(self, key, value)

    def register_buffer(self, name, arr):
        self._buffers[name] = arr
        object.__setattr__(self, name, arr)

    def named_parameters(self, prefix=""):
        for k, v in self._params.items():
            yield prefix + k, v
        for k, m in self._children.items():
            yield from m.named_parameters(prefix + k + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for k, v in self._buffers.items():
            yield prefix + k, v
        for k, m in self._children.items():
            yield from m.named_buffers(prefix + k + ".")

    def state(self):
        """Every learnable tensor and buffer as name -> ndarray."""
        out = OrderedDict((k, p.data) for k, p in self.named_parameters())
        out.update(self.named_buffers())
        return out

    def load_state(self, state):
        own = dict(self.named_parameters())
        bufs = dict(self.named_buffers())
        for k, arr in state.items():
            if k in own:
                target = own[k].data
            elif k in bufs:
                target = bufs[k]
            else:
                raise KeyError(f"unexpected entry {k!r}")
            if target.shape != arr.shape:
                raise T.ShapeError(f"{k}: checkpoint shape {arr.shape} vs model {target.shape}")
            target[...] = arr
        missing = (set(own) | set(bufs)) - set(state)
        if missing:
            raise KeyError(f"missing entries: {sorted(missing)}")

    def astype(self, dtype):
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
        for m in self.modules():
            for k, v in list(m._buffers.items()):
                m.register_buffer(k, v.astype(dtype))
        return self

    def modules(self):
        yield self
        for m in self._children.values():
            yield from m.modules()

    def train(self, mode=True):
        for m in self.modules():
            object.__setattr__(m, "training", mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def uniform_init(rng, shape, fan_in, dtype=np.float32):
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def zeros_param(shape, dtype=np.float32):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def ones_param(shape, dtype=np.float32):
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)


class Linear(Module):
    """Affine map over the last axis: y = x W + b, W stored (d_in, d_out)."""

    def __init__(self, d_in, d_out, rng, bias=True):
        super().__init__()
        self.d_in, self.d_out = d_in, d_out
        self.w = uniform_init(rng, (d_in, d_out), d_in)
        self.b = zeros_param((d_out,)) if bias else None

    def forward(self, x):
        if x.shape[-1] != self.d_in:
            raise T.ShapeError(f"Linear expects last dim {self.d_in}, got input {x.shape}")
        y = T.matmul(x, self.w) if x.ndim >= 2 else T.matmul(T.reshape(x, (1, -1)), self.w)
        return y + self.b if self.b is not None else y


class LayerNorm(Module):
    def __init__(self, dim):
        super().__init__()
        self.gamma = ones_param((dim,))
        self.beta = zeros_param((dim,))

    def forward(self, x):
        return T.layer_norm(x, self.gamma, self.beta)


class BatchNorm(Module):
    def __init__(self, channels, momentum=0.1):
        super().__init__()
        self.momentum = momentum
        self.gamma = ones_param((channels,))
        self.beta = zeros_param((channels,))
        self.register_buffer("running_mean", np.zeros(channels, dtype=np.float32))
        self.register_buffer("running_var", np.ones(channels, dtype=np.float32))

    def forward(self, x):
        return T.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                            self.training, self.momentum)


class Conv1d(Module):
    def __init__(self, c_in, c_out, k, rng, stride=1, padding=0):
        super().__init__()
        self.stride, self.padding = stride, padding
        self.w = uniform_init(rng, (c_out, c_in, k), c_in * k)
        self.b = zeros_param((c_out,))

    def forward(self, x):
        return T.conv1d(x, self.w, self.b, self.stride, self.padding)


class Conv3d(Module):
    def __init__(self, c_in, c_out, k, rng, stride=1, padding=0, groups=1):
        super().__init__()
        if c_in % groups or c_out % groups:
            raise ValueError(f"channels {c_in}->{c_out} not divisible by groups={groups}")
        self.stride, self.padding, self.groups = stride, padding, groups
        k3 = (k, k, k) if isinstance(k, int) else tuple(k)
        fan_in = (c_in // groups) * int(np.prod(k3))
        self.w = uniform_init(rng, (c_out, c_in // groups) + k3, fan_in)
        self.b = zeros_param((c_out,))

    def forward(self, x):
        return T.conv3d(x, self.w, self.b, self.stride, self.padding, self.groups)


class Dropout(Module):
    def __init__(self, p, rng):
        super().__init__()
        if not 0 <= p < 1:
            raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
        self.p = p
        self.rng = rng

    def forward(self, x):
        return T.dropout(x, self.p, self.training, self.rng)
