"""Central finite-difference gradient checks in 64-bit precision."""
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, backward

STEP = 1e-5
# entries smaller than this are compared on an absolute scale
FLOOR = 1e-6


@dataclass
class GradReport:
    name: str
    max_rel_error: float
    tol: float
    worst: dict = field(default_factory=dict)

    @property
    def passed(self):
        return bool(self.max_rel_error < self.tol)

    def __str__(self):
        flag = "PASS" if self.passed else "FAIL"
        return f"[{flag}] {self.name}: max rel err {self.max_rel_error:.3e} (tol {self.tol:g})"


def relative_error(analytic, numeric, floor=FLOOR):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def numeric_grad(f, arrays, i, h=STEP):
    x = arrays[i]
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        fp = float(f().data)
        x[idx] = orig - h
        fm = float(f().data)
        x[idx] = orig
        g[idx] = (fp - fm) / (2 * h)
    return g


def grad_check(f, inputs, tol=1e-4, name="f", h=STEP):
    """Compare autograd against central differences for a scalar ``f``.

    ``inputs`` is a Tensor or list of Tensors; each is promoted to float64
    and marked ``requires_grad`` in place. ``f`` takes the tensors as
    positional arguments and must be deterministic across calls.
    """
    if isinstance(inputs, Tensor):
        inputs = [inputs]
    for t in inputs:
        t.data = np.asarray(t.data, dtype=np.float64)
        t.requires_grad = True
        t.grad = None
    out = f(*inputs)
    backward(out)
    analytic = [t.grad.copy() for t in inputs]

    arrays = [t.data for t in inputs]
    worst_err, worst = 0.0, {}
    for i, t in enumerate(inputs):
        num = numeric_grad(lambda: f(*inputs), arrays, i, h)
        err = relative_error(analytic[i], num)
        if err.size and err.max() > worst_err:
            j = np.unravel_index(err.argmax(), err.shape)
            worst_err = float(err.max())
            worst = {"input": i, "index": tuple(int(v) for v in j),
                     "analytic": float(analytic[i][j]), "numeric": float(num[j])}
    return GradReport(name, worst_err, tol, worst)
