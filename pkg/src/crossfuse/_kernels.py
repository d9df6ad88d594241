"""Convolution and pooling kernels.

Two interchangeable backends live here: numba-compiled loops and a pure
numpy path built on strided windows. ``CROSSFUSE_KERNELS=numpy`` forces
the numpy path; otherwise numba is used when it imports cleanly.

All inputs arrive pre-padded; callers own padding and bias.
"""
import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

try:
    from numba import njit
    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    HAS_NUMBA = False


def _want_numba():
    flag = os.environ.get("CROSSFUSE_KERNELS", "numba").strip().lower()
    return HAS_NUMBA and flag != "numpy"


# ---------------------------------------------------------------------------
# numpy path
# ---------------------------------------------------------------------------

def np_conv1d_fwd(x, w, stride):
    k = w.shape[2]
    win = sliding_window_view(x, k, axis=2)[:, :, ::stride]  # b, ci, lo, k
    return np.einsum("bclk,ock->bol", win, w, optimize=True)


def np_conv1d_bwd(x, w, g, stride):
    k = w.shape[2]
    lo = g.shape[2]
    win = sliding_window_view(x, k, axis=2)[:, :, ::stride]
    gw = np.einsum("bol,bclk->ock", g, win, optimize=True)
    gx = np.zeros_like(x)
    for t in range(k):
        gx[:, :, t:t + stride * (lo - 1) + 1:stride] += np.einsum(
            "bol,oc->bcl", g, w[:, :, t], optimize=True)
    return gx, gw


def np_conv3d_fwd(x, w, stride):
    kd, kh, kw = w.shape[2:]
    sd, sh, sw = stride
    win = sliding_window_view(x, (kd, kh, kw), axis=(2, 3, 4))[:, :, ::sd, ::sh, ::sw]
    return np.einsum("bcdhwijk,ocijk->bodhw", win, w, optimize=True)


def np_conv3d_bwd(x, w, g, stride):
    kd, kh, kw = w.shape[2:]
    sd, sh, sw = stride
    od, oh, ow = g.shape[2:]
    win = sliding_window_view(x, (kd, kh, kw), axis=(2, 3, 4))[:, :, ::sd, ::sh, ::sw]
    gw = np.einsum("bodhw,bcdhwijk->ocijk", g, win, optimize=True)
    gx = np.zeros_like(x)
    for i in range(kd):
        for j in range(kh):
            for k in range(kw):
                gx[:, :,
                   i:i + sd * (od - 1) + 1:sd,
                   j:j + sh * (oh - 1) + 1:sh,
                   k:k + sw * (ow - 1) + 1:sw] += np.einsum(
                    "bodhw,oc->bcdhw", g, w[:, :, i, j, k], optimize=True)
    return gx, gw


def np_maxpool1d_fwd(x, k, stride):
    win = sliding_window_view(x, k, axis=2)[:, :, ::stride]
    idx = np.argmax(win, axis=3)  # first max on ties
    out = np.take_along_axis(win, idx[..., None], axis=3)[..., 0]
    return out, idx


def np_maxpool1d_bwd(shape, idx, g, stride):
    b, c, lo = g.shape
    gx = np.zeros(shape, dtype=g.dtype)
    pos = np.arange(lo) * stride + idx  # b, c, lo
    bi = np.arange(b)[:, None, None]
    ci = np.arange(c)[None, :, None]
    np.add.at(gx, (bi, ci, pos), g)
    return gx


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------

if HAS_NUMBA:
    # Convolutions gather input windows into a column matrix in a compiled
    # loop and hand the contraction to BLAS through np.dot; the backward
    # pass scatters column gradients back the same way.

    @njit(cache=True)
    def _im2col1d(x, k, stride, lo):
        b, ci, _ = x.shape
        cols = np.empty((ci * k, b * lo), dtype=x.dtype)
        for c in range(ci):
            for t in range(k):
                row = c * k + t
                for n in range(b):
                    for l in range(lo):
                        cols[row, n * lo + l] = x[n, c, l * stride + t]
        return cols

    @njit(cache=True)
    def nb_conv1d_fwd(x, w, stride):
        b = x.shape[0]
        co, ci, k = w.shape
        lo = (x.shape[2] - k) // stride + 1
        res = np.dot(w.reshape(co, ci * k), _im2col1d(x, k, stride, lo))
        out = np.empty((b, co, lo), dtype=x.dtype)
        for o in range(co):
            for n in range(b):
                for l in range(lo):
                    out[n, o, l] = res[o, n * lo + l]
        return out

    @njit(cache=True)
    def nb_conv1d_bwd(x, w, g, stride):
        b, ci, _ = x.shape
        co, _, k = w.shape
        lo = g.shape[2]
        gm = np.empty((co, b * lo), dtype=g.dtype)
        for n in range(b):
            for o in range(co):
                for l in range(lo):
                    gm[o, n * lo + l] = g[n, o, l]
        gw = np.dot(gm, _im2col1d(x, k, stride, lo).T.copy()).reshape(co, ci, k)
        gcols = np.dot(w.reshape(co, ci * k).T.copy(), gm)
        gx = np.zeros_like(x)
        for c in range(ci):
            for t in range(k):
                row = c * k + t
                for n in range(b):
                    for l in range(lo):
                        gx[n, c, l * stride + t] += gcols[row, n * lo + l]
        return gx, gw

    @njit(cache=True)
    def _im2col3d(x, kd, kh, kw, sd, sh, sw, od, oh, ow):
        b, ci = x.shape[0], x.shape[1]
        npos = od * oh * ow
        cols = np.empty((ci * kd * kh * kw, b * npos), dtype=x.dtype)
        for c in range(ci):
            for i in range(kd):
                for j in range(kh):
                    for k in range(kw):
                        row = ((c * kd + i) * kh + j) * kw + k
                        for n in range(b):
                            col = n * npos
                            for p in range(od):
                                for q in range(oh):
                                    for r in range(ow):
                                        cols[row, col] = x[n, c, p * sd + i, q * sh + j, r * sw + k]
                                        col += 1
        return cols

    @njit(cache=True)
    def nb_conv3d_fwd(x, w, sd, sh, sw):
        b, _, dd, hh, ww = x.shape
        co, ci, kd, kh, kw = w.shape
        od = (dd - kd) // sd + 1
        oh = (hh - kh) // sh + 1
        ow = (ww - kw) // sw + 1
        npos = od * oh * ow
        cols = _im2col3d(x, kd, kh, kw, sd, sh, sw, od, oh, ow)
        res = np.dot(w.reshape(co, ci * kd * kh * kw), cols)
        out = np.empty((b, co, npos), dtype=x.dtype)
        for o in range(co):
            for n in range(b):
                for m in range(npos):
                    out[n, o, m] = res[o, n * npos + m]
        return out.reshape(b, co, od, oh, ow)

    @njit(cache=True)
    def nb_conv3d_bwd(x, w, g, sd, sh, sw):
        b, ci = x.shape[0], x.shape[1]
        co, _, kd, kh, kw = w.shape
        od, oh, ow = g.shape[2], g.shape[3], g.shape[4]
        npos = od * oh * ow
        nk = ci * kd * kh * kw
        g3 = g.reshape(b, co, npos)
        gm = np.empty((co, b * npos), dtype=g.dtype)
        for n in range(b):
            for o in range(co):
                for m in range(npos):
                    gm[o, n * npos + m] = g3[n, o, m]
        cols = _im2col3d(x, kd, kh, kw, sd, sh, sw, od, oh, ow)
        gw = np.dot(gm, cols.T.copy()).reshape(co, ci, kd, kh, kw)
        gcols = np.dot(w.reshape(co, nk).T.copy(), gm)
        gx = np.zeros_like(x)
        for c in range(ci):
            for i in range(kd):
                for j in range(kh):
                    for k in range(kw):
                        row = ((c * kd + i) * kh + j) * kw + k
                        for n in range(b):
                            col = n * npos
                            for p in range(od):
                                for q in range(oh):
                                    for r in range(ow):
                                        gx[n, c, p * sd + i, q * sh + j, r * sw + k] += gcols[row, col]
                                        col += 1
        return gx, gw

    @njit(cache=True)
    def nb_maxpool1d_fwd(x, k, stride):
        b, c, length = x.shape
        lo = (length - k) // stride + 1
        out = np.empty((b, c, lo), dtype=x.dtype)
        idx = np.empty((b, c, lo), dtype=np.int64)
        for n in range(b):
            for ch in range(c):
                for l in range(lo):
                    base = l * stride
                    best = x[n, ch, base]
                    arg = 0
                    for t in range(1, k):
                        v = x[n, ch, base + t]
                        if v > best:
                            best = v
                            arg = t
                    out[n, ch, l] = best
                    idx[n, ch, l] = arg
        return out, idx

    @njit(cache=True)
    def nb_maxpool1d_bwd(gx, idx, g, stride):
        b, c, lo = g.shape
        for n in range(b):
            for ch in range(c):
                for l in range(lo):
                    gx[n, ch, l * stride + idx[n, ch, l]] += g[n, ch, l]
        return gx


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def _common(*arrays):
    """Contiguous copies in one dtype; the BLAS call needs matching types."""
    dt = np.result_type(*arrays)
    return [np.ascontiguousarray(a, dtype=dt) for a in arrays]


def conv1d_fwd(x, w, stride):
    if _want_numba():
        return nb_conv1d_fwd(*_common(x, w), stride)
    return np_conv1d_fwd(x, w, stride)


def conv1d_bwd(x, w, g, stride):
    if _want_numba():
        return nb_conv1d_bwd(*_common(x, w, g), stride)
    return np_conv1d_bwd(x, w, g, stride)


def conv3d_fwd(x, w, stride):
    if _want_numba():
        return nb_conv3d_fwd(*_common(x, w), *stride)
    return np_conv3d_fwd(x, w, stride)


def conv3d_bwd(x, w, g, stride):
    if _want_numba():
        return nb_conv3d_bwd(*_common(x, w, g), *stride)
    return np_conv3d_bwd(x, w, g, stride)


def maxpool1d_fwd(x, k, stride):
    if _want_numba():
        return nb_maxpool1d_fwd(np.ascontiguousarray(x), k, stride)
    return np_maxpool1d_fwd(x, k, stride)


def maxpool1d_bwd(shape, idx, g, stride):
    if _want_numba():
        gx = np.zeros(shape, dtype=g.dtype)
        return nb_maxpool1d_bwd(gx, np.ascontiguousarray(idx), np.ascontiguousarray(g), stride)
    return np_maxpool1d_bwd(shape, idx, g, stride)


def backend():
    return "numba" if _want_numba() else "numpy"
