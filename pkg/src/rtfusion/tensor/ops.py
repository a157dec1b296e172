"""Differentiable primitives.

Each function takes ``Tensor`` inputs (python scalars and arrays are accepted as
constants where noted) and returns a new ``Tensor`` whose backward closure is
recorded on the tape.
"""

import math
from functools import lru_cache

import numpy as np

from rtfusion.tensor.core import Tensor, as_tensor
from rtfusion.tensor import kernels as _k

GELU_C = math.sqrt(2.0 / math.pi)
GELU_A = 0.044715


def _const(x, like):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(a, b, op):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shapes {a.shape} and {b.shape} are not compatible") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    a = a if isinstance(a, Tensor) else _const(a, b)
    b = _const(b, a)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return Tensor._result(a.data + b.data, (a, b), bw, "add")


def sub(a, b):
    a = a if isinstance(a, Tensor) else _const(a, b)
    b = _const(b, a)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return Tensor._result(a.data - b.data, (a, b), bw, "sub")


def mul(a, b):
    """Elementwise product with numpy broadcasting (used for PE, edge gates, masks)."""
    a = a if isinstance(a, Tensor) else _const(a, b)
    b = _const(b, a)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._result(ad * bd, (a, b), bw, "mul")


def scalar_mul(x, s):
    s = float(s)

    def bw(g):
        return (g * s,)

    return Tensor._result(x.data * x.dtype.type(s), (x,), bw, "scalar_mul")


def add_scalar(x, s):
    return Tensor._result(x.data + x.dtype.type(s), (x,), lambda g: (g,), "add_scalar")


# ---------------------------------------------------------------------------
# activations


def relu(x):
    mask = x.data > 0
    return Tensor._result(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


def gelu(x):
    """Tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))."""
    d = x.data
    u = GELU_C * (d + GELU_A * d * d * d)
    t = np.tanh(u)
    out = 0.5 * d * (1.0 + t)

    def bw(g):
        du = GELU_C * (1.0 + 3.0 * GELU_A * d * d)
        return (g * (0.5 * (1.0 + t) + 0.5 * d * (1.0 - t * t) * du),)

    return Tensor._result(out.astype(x.dtype, copy=False), (x,), bw, "gelu")


def _sigmoid_np(d):
    e = np.exp(-np.abs(d))
    s = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype, copy=False)
    # keep strictly inside (0, 1) even where the float type saturates
    lo = np.finfo(d.dtype).tiny
    hi = np.nextafter(d.dtype.type(1), d.dtype.type(0))
    return np.clip(s, lo, hi)


def sigmoid(x):
    s = _sigmoid_np(x.data)
    return Tensor._result(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def softplus(x):
    d = x.data
    out = np.logaddexp(d.dtype.type(0), d)
    s = _sigmoid_np(d)
    return Tensor._result(out, (x,), lambda g: (g * s,), "softplus")


def abs(x):  # noqa: A001
    sgn = np.sign(x.data)  # subgradient 0 at 0
    return Tensor._result(np.abs(x.data), (x,), lambda g: (g * sgn,), "abs")


def exp(x):
    out = np.exp(x.data)
    return Tensor._result(out, (x,), lambda g: (g * out,), "exp")


def clamp_max(x, hi):
    keep = x.data <= hi
    out = np.minimum(x.data, x.dtype.type(hi))
    return Tensor._result(out, (x,), lambda g: (g * keep,), "clamp_max")


# ---------------------------------------------------------------------------
# reductions and shape plumbing


def sum(x):  # noqa: A001
    shape = x.shape
    return Tensor._result(np.asarray(x.data.sum(), dtype=x.dtype), (x,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")


def mean(x):
    n = x.data.size
    shape = x.shape
    return Tensor._result(
        np.asarray(x.data.mean(), dtype=x.dtype),
        (x,),
        lambda g: (np.full(shape, g / n, dtype=x.dtype),),
        "mean",
    )


def reshape(x, shape):
    src = x.shape
    return Tensor._result(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),), "reshape")


def transpose(x, axes):
    inv = np.argsort(axes)
    return Tensor._result(
        np.ascontiguousarray(x.data.transpose(axes)), (x,), lambda g: (g.transpose(inv),), "transpose"
    )


def index(x, key):
    """Basic (slice/int) indexing; gradient scatters back into a zero array."""
    shape = x.shape

    def bw(g):
        out = np.zeros(shape, dtype=g.dtype)
        out[key] += g
        return (out,)

    return Tensor._result(np.ascontiguousarray(x.data[key]), (x,), bw, "index")


def concat_channels(*xs):
    """Channel concatenation along axis 1, inputs in the given order."""
    if len(xs) == 1 and isinstance(xs[0], (list, tuple)):
        xs = tuple(xs[0])
    ref = xs[0].shape
    for t in xs[1:]:
        if t.ndim != len(ref) or t.shape[0] != ref[0] or t.shape[2:] != ref[2:]:
            raise ValueError(f"concat_channels: shape {t.shape} does not match {ref} outside the channel dim")
    splits = np.cumsum([t.shape[1] for t in xs])[:-1]

    def bw(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=1))

    return Tensor._result(np.concatenate([t.data for t in xs], axis=1), xs, bw, "concat")


def split_channels(x, sizes):
    out, start = [], 0
    for s in sizes:
        out.append(index(x, (slice(None), slice(start, start + s))))
        start += s
    if start != x.shape[1]:
        raise ValueError(f"split_channels: sizes {sizes} do not sum to {x.shape[1]} channels")
    return out


def flatten_spatial(x):
    """(N, C, H, W) -> (N, H*W, C) with tokens in row-major spatial order."""
    if x.ndim != 4:
        raise ValueError(f"flatten_spatial expects rank 4, got shape {x.shape}")
    n, c, h, w = x.shape
    return reshape(transpose(x, (0, 2, 3, 1)), (n, h * w, c))


def unflatten_spatial(x, h, w):
    """Inverse of ``flatten_spatial``."""
    n, length, c = x.shape
    if length != h * w:
        raise ValueError(f"unflatten_spatial: {length} tokens cannot fold into {h}x{w}")
    return transpose(reshape(x, (n, h, w, c)), (0, 3, 1, 2))


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    """Batched ``a @ b`` over the last two axes."""
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: inner dimensions differ ({a.shape[-1]} vs {b.shape[-2]})")
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._result(np.matmul(ad, bd), (a, b), bw, "matmul")


def softmax_lastdim(x):
    d = x.data
    e = np.exp(d - d.max(axis=-1, keepdims=True))
    s = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return Tensor._result(s, (x,), bw, "softmax")


def layer_norm(x, weight=None, bias=None, eps=1e-6):
    """Normalize over the channel axis (1) at every (n, h, w) position."""
    d = x.data
    c = d.shape[1]
    mu = d.mean(axis=1, keepdims=True)
    xc = d - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + d.dtype.type(eps))
    xhat = xc * inv
    bshape = (1, c) + (1,) * (d.ndim - 2)
    out = xhat
    parents = [x]
    if weight is not None:
        if weight.shape != (c,):
            raise ValueError(f"layer_norm: weight shape {weight.shape} != ({c},)")
        out = out * weight.data.reshape(bshape)
        parents.append(weight)
    if bias is not None:
        if bias.shape != (c,):
            raise ValueError(f"layer_norm: bias shape {bias.shape} != ({c},)")
        out = out + bias.data.reshape(bshape)
        parents.append(bias)
    red = (0,) + tuple(range(2, d.ndim))

    def bw(g):
        gxhat = g * weight.data.reshape(bshape) if weight is not None else g
        gx = inv * (gxhat - gxhat.mean(axis=1, keepdims=True) - xhat * (gxhat * xhat).mean(axis=1, keepdims=True))
        grads = [gx]
        if weight is not None:
            grads.append((g * xhat).sum(axis=red))
        if bias is not None:
            grads.append(g.sum(axis=red))
        return tuple(grads)

    return Tensor._result(out.astype(d.dtype, copy=False), tuple(parents), bw, "layer_norm")


# ---------------------------------------------------------------------------
# convolution


def conv_out_size(size, k, stride, padding):
    return (size + 2 * padding - k) // stride + 1


def conv2d(x, weight, bias=None, stride=1, padding=0, groups=1):
    """Grouped 2-D cross-correlation with zero padding.

    ``weight`` is (Cout, Cin/groups, kh, kw). Three routes: 1x1 unpadded
    stride-1 convs are a single matmul, depthwise convs use the direct kernel,
    everything else goes through im2col.
    """
    if x.ndim != 4:
        raise ValueError(f"conv2d: input must be rank 4 (N, C, H, W), got shape {x.shape}")
    if weight.ndim != 4:
        raise ValueError(f"conv2d: weight must be rank 4 (Cout, Cin/groups, kh, kw), got shape {weight.shape}")
    n, c, h, w = x.shape
    cout, cin_g, kh, kw = weight.shape
    if stride < 1 or padding < 0 or groups < 1:
        raise ValueError(f"conv2d: need stride >= 1, padding >= 0, groups >= 1 (got {stride}, {padding}, {groups})")
    if c % groups or cout % groups:
        raise ValueError(f"conv2d: channels in={c} / out={cout} not divisible by groups={groups}")
    if cin_g * groups != c:
        raise ValueError(
            f"conv2d: input channel dim is {c} but weight expects {cin_g} per group x {groups} groups = {cin_g * groups}"
        )
    if bias is not None and bias.shape != (cout,):
        raise ValueError(f"conv2d: bias shape {bias.shape} != ({cout},)")
    ho, wo = conv_out_size(h, kh, stride, padding), conv_out_size(w, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d: kernel {kh}x{kw} does not fit input height/width {h}x{w} with padding {padding}")

    xd, wd = x.data, weight.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    if kh == 1 and kw == 1 and stride == 1 and padding == 0 and groups == 1:
        w2 = wd.reshape(cout, c)
        x3 = xd.reshape(n, c, h * w)
        out = np.matmul(w2, x3).reshape(n, cout, h, w)

        def bw(g):
            g3 = g.reshape(n, cout, h * w)
            gx = np.matmul(w2.T, g3).reshape(xd.shape) if x.requires_grad else None
            gw = np.tensordot(g3, x3, axes=([0, 2], [0, 2])).reshape(wd.shape) if weight.requires_grad else None
            return (gx, gw) + ((g.sum(axis=(0, 2, 3)),) if bias is not None else ())

    elif groups == c and cout == c and cin_g == 1:
        xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
        w3 = np.ascontiguousarray(wd.reshape(c, kh, kw))
        out = _k.KERNELS.dwconv_forward(xp, w3, stride, ho, wo)

        def bw(g):
            gxp, gw = _k.KERNELS.dwconv_backward(xp, w3, np.ascontiguousarray(g), stride)
            gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
            return (np.ascontiguousarray(gx), gw.reshape(wd.shape)) + (
                (g.sum(axis=(0, 2, 3)),) if bias is not None else ()
            )

    else:
        xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
        hp, wp = xp.shape[2:]
        cols = _k.KERNELS.im2col(xp, kh, kw, stride, ho, wo)
        kdim = cin_g * kh * kw
        cols_g = cols.reshape(n, groups, kdim, ho * wo)
        w_g = wd.reshape(groups, cout // groups, kdim)
        out = np.matmul(w_g[None], cols_g).reshape(n, cout, ho, wo)

        def bw(g):
            g_g = g.reshape(n, groups, cout // groups, ho * wo)
            gx = gw = None
            if x.requires_grad:
                gcols = np.matmul(np.swapaxes(w_g, -1, -2)[None], g_g).reshape(n, c, kh, kw, ho, wo)
                gxp = _k.KERNELS.col2im(gcols, hp, wp, stride)
                gx = np.ascontiguousarray(gxp[:, :, padding : padding + h, padding : padding + w])
            if weight.requires_grad:
                gw = np.matmul(g_g, np.swapaxes(cols_g, -1, -2)).sum(axis=0).reshape(wd.shape)
            return (gx, gw) + ((g.sum(axis=(0, 2, 3)),) if bias is not None else ())

    if bias is not None:
        out = out + bias.data.reshape(1, cout, 1, 1)
    return Tensor._result(out.astype(xd.dtype, copy=False), parents, bw, "conv2d")


# ---------------------------------------------------------------------------
# resampling


@lru_cache(maxsize=256)
def _interp_matrix(src, dst, dtype):
    """(dst, src) matrix of half-pixel bilinear weights, clamped at the borders."""
    m = np.zeros((dst, src), dtype=np.float64)
    scale = src / dst
    for i in range(dst):
        p = (i + 0.5) * scale - 0.5
        p = min(max(p, 0.0), src - 1.0)
        lo = int(math.floor(p))
        hi = min(lo + 1, src - 1)
        frac = p - lo
        m[i, lo] += 1.0 - frac
        m[i, hi] += frac
    m = m.astype(dtype)
    m.setflags(write=False)
    return m


def bilinear_interp(x, out_h, out_w):
    """Resize (N, C, H, W) to (N, C, out_h, out_w) with half-pixel sampling.

    Separable: out = Ry @ x @ Rx^T, so the backward is two transposed matmuls.
    """
    if x.ndim != 4:
        raise ValueError(f"bilinear_interp: input must be rank 4, got shape {x.shape}")
    out_h, out_w = int(out_h), int(out_w)
    if out_h < 1 or out_w < 1:
        raise ValueError(f"bilinear_interp: output size must be >= 1, got {out_h}x{out_w}")
    h, w = x.shape[2:]
    if (h, w) == (out_h, out_w):
        return Tensor._result(x.data.copy(), (x,), lambda g: (g,), "interp")
    ry = _interp_matrix(h, out_h, x.dtype.str)
    rx = _interp_matrix(w, out_w, x.dtype.str)
    out = np.matmul(np.matmul(ry, x.data), rx.T)

    def bw(g):
        return (np.matmul(ry.T, np.matmul(g, rx)),)

    return Tensor._result(out, (x,), bw, "interp")
