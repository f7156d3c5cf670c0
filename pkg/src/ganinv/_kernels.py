"""Patch-matrix kernels behind the convolution ops.

Two interchangeable implementations: numpy (reference, always
available) and numba-compiled loops that fuse zero padding and gradient
dilation into a single pass over an uninitialized output, saving the
intermediate copies and memsets that otherwise dominate training time.
Both produce bitwise-identical results — the kernels only move float64
values, no arithmetic — and the test suite asserts equality on random
cases whenever numba is present.

im2col layout is [B, C*kh*kw, OH*OW] with the kernel offset minor to
the channel, matching kernel.reshape(O, C*kh*kw).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        return wrap


def out_hw(h, w, kh, kw, stride, pad):
    return (h + 2 * pad - kh) // stride + 1, (w + 2 * pad - kw) // stride + 1


# ---------------------------------------------------------------------------
# numpy reference


def im2col_np(x, kh, kw, stride, pad):
    b, c, h, w = x.shape
    oh, ow = out_hw(h, w, kh, kw, stride, pad)
    if pad:
        xp = np.zeros((b, c, h + 2 * pad, w + 2 * pad))
        xp[:, :, pad : pad + h, pad : pad + w] = x
    else:
        xp = x
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3))
    return cols.reshape(b, c * kh * kw, oh * ow)


def im2col_grad_np(g, kh, kw, stride, pad, xh, xw):
    """Patch matrix of the stride-dilated, edge-padded output gradient.

    Used by the transposed convolution: equals im2col(dilate(g), kh, kw,
    1, 0) where dilate inserts stride-1 zeros and pads by kernel-1-pad
    (plus the stride remainder on the far edges).
    """
    b, o, oh, ow = g.shape
    eh = (xh + 2 * pad - kh) % stride
    ew = (xw + 2 * pad - kw) % stride
    lo_h, lo_w = kh - 1 - pad, kw - 1 - pad
    hd = (oh - 1) * stride + 1 + eh + 2 * lo_h
    wd = (ow - 1) * stride + 1 + ew + 2 * lo_w
    gd = np.zeros((b, o, hd, wd))
    gd[:, :, lo_h : lo_h + (oh - 1) * stride + 1 : stride, lo_w : lo_w + (ow - 1) * stride + 1 : stride] = g
    win = sliding_window_view(gd, (kh, kw), axis=(2, 3))
    cols = np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3))
    return cols.reshape(b, o * kh * kw, xh * xw)


# ---------------------------------------------------------------------------
# numba kernels: one pass over an empty output, bounds hoisted


@njit(cache=True)
def _im2col_nb(x, kh, kw, stride, pad, oh, ow, out):
    b, c, h, w = x.shape
    for bc in range(b * c):
        bi = bc // c
        ci = bc % c
        for i in range(kh):
            yo0 = 0 if i >= pad else (pad - i + stride - 1) // stride
            yo1 = min(oh, (h - 1 - i + pad) // stride + 1)
            for j in range(kw):
                xo0 = 0 if j >= pad else (pad - j + stride - 1) // stride
                xo1 = min(ow, (w - 1 - j + pad) // stride + 1)
                row = (ci * kh + i) * kw + j
                for yo in range(oh):
                    base = yo * ow
                    if yo < yo0 or yo >= yo1:
                        for xo in range(ow):
                            out[bi, row, base + xo] = 0.0
                        continue
                    yi = yo * stride + i - pad
                    for xo in range(xo0):
                        out[bi, row, base + xo] = 0.0
                    xi = xo0 * stride + j - pad
                    for xo in range(xo0, xo1):
                        out[bi, row, base + xo] = x[bi, ci, yi, xi]
                        xi += stride
                    for xo in range(xo1, ow):
                        out[bi, row, base + xo] = 0.0


@njit(cache=True)
def _im2col_grad_nb(g, kh, kw, stride, pad, xh, xw, out):
    # column p = (y, x) of the input-shaped gradient; the entry for
    # kernel offset (i, j) reads g at the output position that touched
    # input (y, x) with that offset: y = stride*yg + (kh-1-i) - pad
    b, o, oh, ow = g.shape
    for bo in range(b * o):
        bi = bo // o
        oi = bo % o
        for i in range(kh):
            off_y = (kh - 1 - i) - pad
            yg0 = 0 if off_y >= 0 else (-off_y + stride - 1) // stride
            yg1 = min(oh, (xh - 1 - off_y) // stride + 1)
            for j in range(kw):
                off_x = (kw - 1 - j) - pad
                xg0 = 0 if off_x >= 0 else (-off_x + stride - 1) // stride
                xg1 = min(ow, (xw - 1 - off_x) // stride + 1)
                row = (oi * kh + i) * kw + j
                # zero the full plane, then overwrite covered positions
                for p in range(xh * xw):
                    out[bi, row, p] = 0.0
                for yg in range(yg0, yg1):
                    base = (stride * yg + off_y) * xw + off_x
                    for xg in range(xg0, xg1):
                        out[bi, row, base + stride * xg] = g[bi, oi, yg, xg]


@njit(cache=True)
def _im2col_grad_s1_nb(g, kh, kw, pad, xh, xw, out):
    # stride-1 specialization: covered positions are contiguous runs
    b, o, oh, ow = g.shape
    for bo in range(b * o):
        bi = bo // o
        oi = bo % o
        for i in range(kh):
            off_y = (kh - 1 - i) - pad
            yg0 = 0 if off_y >= 0 else -off_y
            yg1 = min(oh, xh - off_y)
            for j in range(kw):
                off_x = (kw - 1 - j) - pad
                xg0 = 0 if off_x >= 0 else -off_x
                xg1 = min(ow, xw - off_x)
                row = (oi * kh + i) * kw + j
                for y in range(xh):
                    yg = y - off_y
                    base = y * xw
                    if yg < yg0 or yg >= yg1:
                        for p in range(xw):
                            out[bi, row, base + p] = 0.0
                        continue
                    x0 = xg0 + off_x
                    x1 = xg1 + off_x
                    for p in range(x0):
                        out[bi, row, base + p] = 0.0
                    for xg in range(xg0, xg1):
                        out[bi, row, base + off_x + xg] = g[bi, oi, yg, xg]
                    for p in range(x1, xw):
                        out[bi, row, base + p] = 0.0


def im2col(x, kh, kw, stride, pad):
    if not HAVE_NUMBA:
        return im2col_np(x, kh, kw, stride, pad)
    b, c, h, w = x.shape
    oh, ow = out_hw(h, w, kh, kw, stride, pad)
    out = np.empty((b, c * kh * kw, oh * ow))
    _im2col_nb(np.ascontiguousarray(x), kh, kw, stride, pad, oh, ow, out)
    return out


def im2col_grad(g, kh, kw, stride, pad, xh, xw):
    if not HAVE_NUMBA:
        return im2col_grad_np(g, kh, kw, stride, pad, xh, xw)
    out = np.empty((g.shape[0], g.shape[1] * kh * kw, xh * xw))
    g = np.ascontiguousarray(g)
    if stride == 1:
        _im2col_grad_s1_nb(g, kh, kw, pad, xh, xw, out)
    else:
        _im2col_grad_nb(g, kh, kw, stride, pad, xh, xw, out)
    return out
