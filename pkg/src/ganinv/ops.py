"""Graph op kinds and composite builders.

Primitives keep the differentiable core small: elementwise arithmetic
with numpy broadcasting, matmul (rank 2/3 with batch broadcast), shape
ops, reductions, a few scalar nonlinearities, and a closed family of
six convolution kinds. Every vector-Jacobian product is emitted as
graph nodes built from these same kinds, so gradients of gradients are
well defined to any order.

Convolutions use the trilinear-trio trick: for y = conv(x, k), the
input gradient is itself a convolution kind (conv2d_dx, a transposed
convolution) and the kernel gradient another (conv2d_dk, a
correlation). Each kind's VJP references only the other two, closing
the family under differentiation. Lowering conv to explicit im2col
matmuls in the graph would make the backward pass several times slower.

Convention: feature maps are [B, C, H, W]; kernels [O, C, kh, kw];
per-sample kernels [B, O, C, kh, kw]; all arrays float64. Output
shapes are inferred by the builders at graph-construction time.
"""

from __future__ import annotations

import numpy as np

from ganinv import _kernels
from ganinv.graph import OPS, Graph, OpDef, ShapeMismatch, Tensor


def _register(kind, forward, vjp):
    OPS[kind] = OpDef(forward=forward, vjp=vjp)


def _node(t: Tensor, kind, inputs, shape, attrs=None) -> Tensor:
    return t.graph.add(kind, tuple(i.nid for i in inputs), shape, attrs)


def _same_graph(*ts: Tensor) -> Graph:
    g = ts[0].graph
    if any(t.graph is not g for t in ts):
        raise ShapeMismatch("op", "operands belong to different graphs")
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic (numpy broadcasting)


def _broadcast_shape(op, sa, sb):
    try:
        return tuple(np.broadcast_shapes(sa, sb))
    except ValueError:
        raise ShapeMismatch(op, f"cannot broadcast {sa} with {sb}") from None


def _reduce_to(t: Tensor, shape) -> Tensor:
    """Sum t down to `shape` (inverse of broadcasting)."""
    if t.shape == tuple(shape):
        return t
    extra = len(t.shape) - len(shape)
    axes = list(range(extra))
    for i, d in enumerate(shape):
        if d == 1 and t.shape[extra + i] != 1:
            axes.append(extra + i)
    out = reduce_sum(t, axes=tuple(axes), keepdims=False)
    return reshape(out, shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_graph(a, b)
    return _node(a, "add", (a, b), _broadcast_shape("add", a.shape, b.shape))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_graph(a, b)
    return _node(a, "mul", (a, b), _broadcast_shape("mul", a.shape, b.shape))


def div(a: Tensor, b: Tensor) -> Tensor:
    _same_graph(a, b)
    return _node(a, "div", (a, b), _broadcast_shape("div", a.shape, b.shape))


def scale(a: Tensor, c: float) -> Tensor:
    return mul(a, a.graph.const(float(c)))


_register(
    "add",
    forward=lambda attrs, a, b: a + b,
    vjp=lambda g, out, ins, attrs: (_reduce_to(g, ins[0].shape), _reduce_to(g, ins[1].shape)),
)
_register(
    "mul",
    forward=lambda attrs, a, b: a * b,
    vjp=lambda g, out, ins, attrs: (
        _reduce_to(mul(g, ins[1]), ins[0].shape),
        _reduce_to(mul(g, ins[0]), ins[1].shape),
    ),
)
_register(
    "div",
    forward=lambda attrs, a, b: a / b,
    vjp=lambda g, out, ins, attrs: (
        _reduce_to(div(g, ins[1]), ins[0].shape),
        _reduce_to(scale(mul(g, div(ins[0], mul(ins[1], ins[1]))), -1.0), ins[1].shape),
    ),
)


# ---------------------------------------------------------------------------
# matmul: ranks 2 and 3, with 2d operands broadcasting over a batch axis


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _same_graph(a, b)
    sa, sb = a.shape, b.shape
    if len(sa) not in (2, 3) or len(sb) not in (2, 3):
        raise ShapeMismatch("matmul", f"ranks must be 2 or 3, got {sa} x {sb}")
    if sa[-1] != sb[-2]:
        raise ShapeMismatch("matmul", f"inner dims differ: {sa} x {sb}")
    if len(sa) == 3 and len(sb) == 3 and sa[0] != sb[0]:
        raise ShapeMismatch("matmul", f"batch dims differ: {sa} x {sb}")
    batch = ()
    if len(sa) == 3:
        batch = (sa[0],)
    elif len(sb) == 3:
        batch = (sb[0],)
    return _node(a, "matmul", (a, b), batch + (sa[-2], sb[-1]))


def _t_last2(t: Tensor) -> Tensor:
    perm = (1, 0) if len(t.shape) == 2 else (0, 2, 1)
    return transpose(t, perm)


def _matmul_vjp(g, out, ins, attrs):
    a, b = ins
    da = matmul(g, _t_last2(b))
    db = matmul(_t_last2(a), g)
    if len(a.shape) == 2 and len(da.shape) == 3:
        da = reduce_sum(da, axes=(0,))
    if len(b.shape) == 2 and len(db.shape) == 3:
        db = reduce_sum(db, axes=(0,))
    return (da, db)


_register("matmul", forward=lambda attrs, a, b: np.matmul(a, b), vjp=_matmul_vjp)


# ---------------------------------------------------------------------------
# shape ops


def transpose(a: Tensor, perm) -> Tensor:
    perm = tuple(int(p) for p in perm)
    if sorted(perm) != list(range(len(a.shape))):
        raise ShapeMismatch("transpose", f"perm {perm} invalid for shape {a.shape}")
    shape = tuple(a.shape[p] for p in perm)
    return _node(a, "transpose", (a,), shape, {"perm": perm})


_register(
    "transpose",
    forward=lambda attrs, a: np.transpose(a, attrs["perm"]),  # view
    vjp=lambda g, out, ins, attrs: (transpose(g, np.argsort(attrs["perm"])),),
)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(d) for d in shape)
    if int(np.prod(shape, dtype=np.int64)) != a.size:
        raise ShapeMismatch("reshape", f"cannot reshape {a.shape} to {shape}")
    return _node(a, "reshape", (a,), shape, {"shape": shape})


_register(
    "reshape",
    forward=lambda attrs, a: np.reshape(a, attrs["shape"]),
    vjp=lambda g, out, ins, attrs: (reshape(g, ins[0].shape),),
)


def broadcast_to(a: Tensor, shape) -> Tensor:
    shape = tuple(int(d) for d in shape)
    _broadcast_shape("broadcast_to", a.shape, shape)  # validity check
    return _node(a, "broadcast_to", (a,), shape, {"shape": shape})


_register(
    "broadcast_to",
    forward=lambda attrs, a: np.broadcast_to(a, attrs["shape"]),  # view
    vjp=lambda g, out, ins, attrs: (_reduce_to(g, ins[0].shape),),
)


def reduce_sum(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    nd = len(a.shape)
    if axes is None:
        axes = tuple(range(nd))
    axes = tuple(sorted(ax % nd for ax in axes))
    if len(set(axes)) != len(axes):
        raise ShapeMismatch("reduce_sum", f"duplicate axes {axes}")
    if keepdims:
        shape = tuple(1 if i in axes else d for i, d in enumerate(a.shape))
    else:
        shape = tuple(d for i, d in enumerate(a.shape) if i not in axes)
    return _node(a, "reduce_sum", (a,), shape, {"axes": axes, "keepdims": keepdims})


def _reduce_sum_vjp(g, out, ins, attrs):
    (a,) = ins
    axes = attrs["axes"]
    if not attrs["keepdims"] and axes:
        kshape = tuple(1 if i in axes else d for i, d in enumerate(a.shape))
        g = reshape(g, kshape)
    return (broadcast_to(g, a.shape),)


_register(
    "reduce_sum",
    forward=lambda attrs, a: np.sum(a, axis=attrs["axes"] or None, keepdims=attrs["keepdims"])
    if attrs["axes"]
    else a,
    vjp=_reduce_sum_vjp,
)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    axis = axis % len(a.shape)
    if not (0 <= start <= stop <= a.shape[axis]):
        raise ShapeMismatch("slice", f"[{start}:{stop}] out of range for axis {axis} of {a.shape}")
    shape = tuple(stop - start if i == axis else d for i, d in enumerate(a.shape))
    return _node(a, "slice", (a,), shape, {"axis": axis, "start": start, "stop": stop})


def _slice_forward(attrs, a):
    idx = [slice(None)] * a.ndim
    idx[attrs["axis"]] = slice(attrs["start"], attrs["stop"])
    return a[tuple(idx)]  # view


_register(
    "slice",
    forward=_slice_forward,
    vjp=lambda g, out, ins, attrs: (
        pad_axis(g, attrs["axis"], attrs["start"], ins[0].shape[attrs["axis"]] - attrs["stop"]),
    ),
)


def pad_axis(a: Tensor, axis: int, before: int, after: int) -> Tensor:
    axis = axis % len(a.shape)
    if before < 0 or after < 0:
        raise ShapeMismatch("pad", f"negative padding ({before}, {after})")
    shape = tuple(d + before + after if i == axis else d for i, d in enumerate(a.shape))
    return _node(a, "pad", (a,), shape, {"axis": axis, "before": before, "after": after})


def _pad_forward(attrs, a):
    width = [(0, 0)] * a.ndim
    width[attrs["axis"]] = (attrs["before"], attrs["after"])
    return np.pad(a, width)


_register(
    "pad",
    forward=_pad_forward,
    vjp=lambda g, out, ins, attrs: (
        slice_axis(g, attrs["axis"], attrs["before"], attrs["before"] + ins[0].shape[attrs["axis"]]),
    ),
)


def concat(parts, axis: int) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ShapeMismatch("concat", "no inputs")
    _same_graph(*parts)
    axis = axis % len(parts[0].shape)
    base = parts[0].shape
    total = 0
    for p in parts:
        if len(p.shape) != len(base) or any(
            d != e for i, (d, e) in enumerate(zip(p.shape, base)) if i != axis
        ):
            raise ShapeMismatch("concat", f"shapes {base} and {p.shape} differ off axis {axis}")
        total += p.shape[axis]
    shape = tuple(total if i == axis else d for i, d in enumerate(base))
    return _node(parts[0], "concat", tuple(parts), shape, {"axis": axis})


def _concat_vjp(g, out, ins, attrs):
    axis = attrs["axis"]
    grads = []
    offset = 0
    for p in ins:
        n = p.shape[axis]
        grads.append(slice_axis(g, axis, offset, offset + n))
        offset += n
    return tuple(grads)


_register(
    "concat",
    forward=lambda attrs, *parts: np.concatenate(parts, axis=attrs["axis"]),
    vjp=_concat_vjp,
)


# ---------------------------------------------------------------------------
# scalar nonlinearities


def heaviside(a: Tensor) -> Tensor:
    """1.0 where x >= 0 else 0.0 (positive branch wins at exactly 0)."""
    return _node(a, "heaviside", (a,), a.shape)


_register(
    "heaviside",
    forward=lambda attrs, a: (a >= 0).astype(np.float64),
    vjp=lambda g, out, ins, attrs: (None,),
)


def sign(a: Tensor) -> Tensor:
    return _node(a, "sign", (a,), a.shape)


_register(
    "sign",
    forward=lambda attrs, a: np.sign(a),
    vjp=lambda g, out, ins, attrs: (None,),
)


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    return _node(a, "leaky_relu", (a,), a.shape, {"slope": float(slope)})


def _lrelu_bwd(g: Tensor, x: Tensor, slope: float) -> Tensor:
    """g where x >= 0 else slope*g; the masked-scale behind leaky_relu.

    Its own derivative in x is zero almost everywhere (the kink at 0 is
    measure zero and takes the positive branch), so double backprop
    through leaky_relu terminates cleanly.
    """
    if g.shape != x.shape:
        raise ShapeMismatch("lrelu_bwd", f"shapes differ: {g.shape} vs {x.shape}")
    return _node(g, "lrelu_bwd", (g, x), g.shape, {"slope": float(slope)})


_register(
    "leaky_relu",
    forward=lambda attrs, a: np.where(a >= 0, a, attrs["slope"] * a),
    vjp=lambda g, out, ins, attrs: (_lrelu_bwd(g, ins[0], attrs["slope"]),),
)
_register(
    "lrelu_bwd",
    forward=lambda attrs, g, x: np.where(x >= 0, g, attrs["slope"] * g),
    vjp=lambda g2, out, ins, attrs: (_lrelu_bwd(g2, ins[1], attrs["slope"]), None),
)


def sqrt(a: Tensor) -> Tensor:
    return _node(a, "sqrt", (a,), a.shape)


_register(
    "sqrt",
    forward=lambda attrs, a: np.sqrt(a),
    vjp=lambda g, out, ins, attrs: (mul(g, div(out.graph.const(0.5), out)),),
)


def _sigmoid_np(x):
    # sigmoid(x) = exp(-softplus(-x)); stable on both tails
    return np.exp(-np.logaddexp(0.0, -x))


def sigmoid(a: Tensor) -> Tensor:
    return _node(a, "sigmoid", (a,), a.shape)


_register(
    "sigmoid",
    forward=lambda attrs, a: _sigmoid_np(a),
    vjp=lambda g, out, ins, attrs: (mul(g, mul(out, add(out.graph.const(1.0), scale(out, -1.0)))),),
)


def softplus(a: Tensor) -> Tensor:
    return _node(a, "softplus", (a,), a.shape)


_register(
    "softplus",
    forward=lambda attrs, a: np.logaddexp(0.0, a),
    vjp=lambda g, out, ins, attrs: (mul(g, sigmoid(ins[0])),),
)


# ---------------------------------------------------------------------------
# convolution family
#
# y[b,o,p] = sum_{c,i,j} x[b,c,s*ph+i-pad, s*pw+j-pad] k[o,c,i,j]
# conv2d_dx and conv2d_dk are the adjoints in the x- and k-slots of this
# trilinear form; ps* variants carry per-sample kernels [B,O,C,kh,kw]
# (conv2d_dk sums over the batch, psconv2d_dk does not).


def _out_hw(h, w, kh, kw, stride, pad):
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ShapeMismatch("conv2d", f"kernel ({kh},{kw}) too large for input ({h},{w}) pad {pad}")
    return oh, ow


def _is_1x1(kshape, stride, pad):
    return kshape[-2] == 1 and kshape[-1] == 1 and stride == 1 and pad == 0


def _conv_fwd(attrs, x, k):
    b = x.shape[0]
    kh, kw = k.shape[-2], k.shape[-1]
    oh, ow = _out_hw(x.shape[2], x.shape[3], kh, kw, attrs["stride"], attrs["pad"])
    if _is_1x1(k.shape, attrs["stride"], attrs["pad"]):
        cols = x.reshape(b, x.shape[1], oh * ow)
    else:
        cols = _kernels.im2col(x, kh, kw, attrs["stride"], attrs["pad"])
    if k.ndim == 4:  # shared kernel [O,C,kh,kw]
        y = np.matmul(k.reshape(k.shape[0], -1), cols)
        return y.reshape(b, k.shape[0], oh, ow)
    y = np.matmul(k.reshape(b, k.shape[1], -1), cols)  # per-sample [B,O,C,kh,kw]
    return y.reshape(b, k.shape[1], oh, ow)


def _conv_dx_fwd(attrs, g, k):
    """Adjoint in x: transposed convolution of g with the kernel."""
    stride, pad = attrs["stride"], attrs["pad"]
    xh, xw = attrs["xh"], attrs["xw"]
    per_sample = k.ndim == 5
    kh, kw = k.shape[-2], k.shape[-1]
    b, o = g.shape[:2]
    if _is_1x1(k.shape, stride, pad):
        g2 = g.reshape(b, o, xh * xw)
        if per_sample:
            kt = k.reshape(b, o, k.shape[2]).transpose(0, 2, 1)  # [B,C,O] view
            return np.matmul(kt, g2).reshape(b, k.shape[2], xh, xw)
        kt = k.reshape(o, k.shape[1]).T  # [C,O] view
        return np.matmul(kt, g2).reshape(b, k.shape[1], xh, xw)
    cols = _kernels.im2col_grad(g, kh, kw, stride, pad, xh, xw)  # [B, O*kh*kw, xh*xw]
    if per_sample:
        kf = k[:, :, :, ::-1, ::-1].transpose(0, 2, 1, 3, 4)  # [B,C,O,kh,kw]
        dx = np.matmul(np.ascontiguousarray(kf).reshape(k.shape[0], k.shape[2], -1), cols)
        return dx.reshape(b, k.shape[2], xh, xw)
    kf = k[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)  # [C,O,kh,kw]
    dx = np.matmul(np.ascontiguousarray(kf).reshape(k.shape[1], -1), cols)
    return dx.reshape(b, k.shape[1], xh, xw)


def _conv_dk_fwd(attrs, x, g, per_sample):
    """Adjoint in k: correlate inputs with output gradients."""
    kh, kw = attrs["kh"], attrs["kw"]
    b = x.shape[0]
    if _is_1x1((kh, kw), attrs["stride"], attrs["pad"]):
        cols = x.reshape(b, x.shape[1], -1)
    else:
        cols = _kernels.im2col(x, kh, kw, attrs["stride"], attrs["pad"])  # [B,CKK,P]
    dk = np.matmul(g.reshape(b, g.shape[1], -1), cols.swapaxes(1, 2))
    if not per_sample:
        return dk.sum(axis=0).reshape(g.shape[1], x.shape[1], kh, kw)
    return dk.reshape(b, g.shape[1], x.shape[1], kh, kw)


def _check_conv_shapes(op, xs, ks, per_sample):
    if len(xs) != 4:
        raise ShapeMismatch(op, f"input must be [B,C,H,W], got {xs}")
    if per_sample:
        if len(ks) != 5:
            raise ShapeMismatch(op, f"per-sample kernel must be [B,O,C,kh,kw], got {ks}")
        if ks[0] != xs[0]:
            raise ShapeMismatch(op, f"kernel batch {ks[0]} != input batch {xs[0]}")
        if ks[2] != xs[1]:
            raise ShapeMismatch(op, f"kernel in-channels {ks[2]} != input channels {xs[1]}")
    else:
        if len(ks) != 4:
            raise ShapeMismatch(op, f"kernel must be [O,C,kh,kw], got {ks}")
        if ks[1] != xs[1]:
            raise ShapeMismatch(op, f"kernel in-channels {ks[1]} != input channels {xs[1]}")


def conv2d(x: Tensor, k: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    _same_graph(x, k)
    per_sample = len(k.shape) == 5
    op = "psconv2d" if per_sample else "conv2d"
    _check_conv_shapes(op, x.shape, k.shape, per_sample)
    kh, kw = k.shape[-2], k.shape[-1]
    if kh - 1 - pad < 0:
        raise ShapeMismatch(op, f"pad {pad} exceeds kernel-1 ({kh - 1})")
    oh, ow = _out_hw(x.shape[2], x.shape[3], kh, kw, stride, pad)
    ochan = k.shape[1] if per_sample else k.shape[0]
    attrs = {"stride": int(stride), "pad": int(pad)}
    return _node(x, op, (x, k), (x.shape[0], ochan, oh, ow), attrs)


def conv2d_dx(g: Tensor, k: Tensor, stride: int, pad: int, xh: int, xw: int) -> Tensor:
    _same_graph(g, k)
    per_sample = len(k.shape) == 5
    op = "psconv2d_dx" if per_sample else "conv2d_dx"
    cchan = k.shape[2] if per_sample else k.shape[1]
    attrs = {"stride": int(stride), "pad": int(pad), "xh": int(xh), "xw": int(xw)}
    return _node(g, op, (g, k), (g.shape[0], cchan, xh, xw), attrs)


def conv2d_dk(x: Tensor, g: Tensor, stride: int, pad: int, kh: int, kw: int, per_sample: bool) -> Tensor:
    _same_graph(x, g)
    op = "psconv2d_dk" if per_sample else "conv2d_dk"
    if per_sample:
        shape = (x.shape[0], g.shape[1], x.shape[1], kh, kw)
    else:
        shape = (g.shape[1], x.shape[1], kh, kw)
    attrs = {"stride": int(stride), "pad": int(pad), "kh": int(kh), "kw": int(kw)}
    return _node(x, op, (x, g), shape, attrs)


def _conv_vjp(g, out, ins, attrs):
    x, k = ins
    per_sample = len(k.shape) == 5
    s, p = attrs["stride"], attrs["pad"]
    dx = conv2d_dx(g, k, s, p, x.shape[2], x.shape[3])
    dk = conv2d_dk(x, g, s, p, k.shape[-2], k.shape[-1], per_sample)
    return (dx, dk)


def _conv_dx_vjp(g, out, ins, attrs):
    # out is x-shaped; g is an x-shaped upstream cotangent
    gin, k = ins
    per_sample = len(k.shape) == 5
    s, p = attrs["stride"], attrs["pad"]
    dgin = conv2d(g, k, s, p)
    dk = conv2d_dk(g, gin, s, p, k.shape[-2], k.shape[-1], per_sample)
    return (dgin, dk)


def _conv_dk_vjp(g, out, ins, attrs):
    # out is kernel-shaped; g is a kernel-shaped upstream cotangent
    x, gin = ins
    s, p = attrs["stride"], attrs["pad"]
    dx = conv2d_dx(gin, g, s, p, x.shape[2], x.shape[3])
    dgin = conv2d(x, g, s, p)
    return (dx, dgin)


for _kind in ("conv2d", "psconv2d"):
    _register(_kind, forward=_conv_fwd, vjp=_conv_vjp)
for _kind in ("conv2d_dx", "psconv2d_dx"):
    _register(_kind, forward=_conv_dx_fwd, vjp=_conv_dx_vjp)
_register(
    "conv2d_dk",
    forward=lambda attrs, x, g: _conv_dk_fwd(attrs, x, g, per_sample=False),
    vjp=_conv_dk_vjp,
)
_register(
    "psconv2d_dk",
    forward=lambda attrs, x, g: _conv_dk_fwd(attrs, x, g, per_sample=True),
    vjp=_conv_dk_vjp,
)


# ---------------------------------------------------------------------------
# composites


def square(a: Tensor) -> Tensor:
    return mul(a, a)


def mean(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    nd = len(a.shape)
    if axes is None:
        axes = tuple(range(nd))
    axes = tuple(ax % nd for ax in axes)
    n = 1
    for ax in axes:
        n *= a.shape[ax]
    return scale(reduce_sum(a, axes=axes, keepdims=keepdims), 1.0 / n)


def upsample2x(a: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling of [B,C,H,W]."""
    if len(a.shape) != 4:
        raise ShapeMismatch("upsample2x", f"need [B,C,H,W], got {a.shape}")
    b, c, h, w = a.shape
    return _node(a, "upsample2x", (a,), (b, c, 2 * h, 2 * w))


def _upsample_fwd(attrs, a):
    b, c, h, w = a.shape
    return np.broadcast_to(a[:, :, :, None, :, None], (b, c, h, 2, w, 2)).reshape(b, c, 2 * h, 2 * w)


def _upsample_vjp(g, out, ins, attrs):
    b, c, h, w = ins[0].shape
    return (reduce_sum(reshape(g, (b, c, h, 2, w, 2)), axes=(3, 5)),)


_register("upsample2x", forward=_upsample_fwd, vjp=_upsample_vjp)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    out = matmul(x, w)
    if b is not None:
        out = add(out, b)
    return out


def conv_bias(y: Tensor, b: Tensor) -> Tensor:
    """Add per-output-channel bias to [B,O,H,W]."""
    return add(y, reshape(b, (1, b.shape[0], 1, 1)))


def modulated_conv2d(x: Tensor, k: Tensor, s: Tensor, demodulate: bool, pad: int | None = None) -> Tensor:
    """Style-modulated convolution with a single style vector.

    The kernel is scaled per input channel by s (length C); with
    demodulate each output-channel filter is rescaled to unit L2 norm
    (eps 1e-8 inside the square root). Same padding, stride 1.
    """
    _same_graph(x, k, s)
    if len(s.shape) != 1 or s.shape[0] != k.shape[1]:
        raise ShapeMismatch(
            "modulated_conv2d", f"style shape {s.shape} incompatible with kernel {k.shape}"
        )
    if pad is None:
        pad = k.shape[-1] // 2
    khat = mul(k, reshape(s, (1, s.shape[0], 1, 1)))
    if demodulate:
        norm2 = reduce_sum(square(khat), axes=(1, 2, 3), keepdims=True)
        khat = div(khat, sqrt(add(norm2, k.graph.const(1e-8))))
    return conv2d(x, khat, stride=1, pad=pad)


def cosine(a: Tensor, b: Tensor, axis: int = -1) -> Tensor:
    """Cosine similarity along `axis`, exact 1.0 on identical inputs.

    Built as sign(<a,b>) * sqrt(<a,b>^2 / (|a|^2 |b|^2)) so that a == b
    divides a float by itself, which IEEE guarantees to be exactly 1.
    """
    _same_graph(a, b)
    dot = reduce_sum(mul(a, b), axes=(axis,))
    na2 = reduce_sum(square(a), axes=(axis,))
    nb2 = reduce_sum(square(b), axes=(axis,))
    ratio = div(square(dot), mul(na2, nb2))
    return mul(sign(dot), sqrt(ratio))
