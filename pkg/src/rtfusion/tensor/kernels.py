"""Hot convolution kernels.

Every kernel exists twice: a numba version and a numpy version with the same
signature. ``KERNELS`` holds the active set; the numpy set is always importable
through ``NUMPY_KERNELS`` so the two paths can be compared directly.

Layout conventions: ``xp`` is the zero-padded input (N, C, Hp, Wp); columns
are (N, C, kh, kw, Ho, Wo); depthwise weights are (C, kh, kw).
"""

from types import SimpleNamespace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from rtfusion._accel import HAVE_NUMBA, njit


# ---------------------------------------------------------------------------
# numpy path


def im2col_numpy(xp, kh, kw, stride, ho, wo):
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : stride * (ho - 1) + 1 : stride, : stride * (wo - 1) + 1 : stride]
    return np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3))


def col2im_numpy(cols, hp, wp, stride):
    n, c, kh, kw, ho, wo = cols.shape
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += cols[:, :, i, j]
    return out


def dwconv_forward_numpy(xp, w, stride, ho, wo):
    n, c = xp.shape[:2]
    _, kh, kw = w.shape
    out = np.zeros((n, c, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            win = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
            out += w[:, i, j][None, :, None, None] * win
    return out


def dwconv_backward_numpy(xp, w, g, stride):
    _, kh, kw = w.shape
    ho, wo = g.shape[2:]
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    for i in range(kh):
        for j in range(kw):
            sl = (slice(None), slice(None), slice(i, i + stride * ho, stride), slice(j, j + stride * wo, stride))
            gw[:, i, j] = np.einsum("nchw,nchw->c", g, xp[sl])
            gxp[sl] += g * w[:, i, j][None, :, None, None]
    return gxp, gw


def adam_numpy(p, g, m, v, lr, b1, b2, bc1, bc2, eps):
    """In-place Adam moment and parameter update on flat arrays."""
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    g = g * g
    g *= 1.0 - b2
    v += g
    denom = v / bc2
    np.sqrt(denom, out=denom)
    denom += eps
    upd = m / bc1
    upd /= denom
    upd *= lr
    p -= upd


NUMPY_KERNELS = SimpleNamespace(
    im2col=im2col_numpy,
    col2im=col2im_numpy,
    dwconv_forward=dwconv_forward_numpy,
    dwconv_backward=dwconv_backward_numpy,
    adam=adam_numpy,
    name="numpy",
)


# ---------------------------------------------------------------------------
# numba path


@njit
def _im2col_flat(xf, m, hp, wp, kh, kw, stride, ho, wo):
    out = np.empty(m * kh * kw * ho * wo, dtype=xf.dtype)
    o = 0
    for b in range(m):
        base = b * hp * wp
        for i in range(kh):
            for j in range(kw):
                for y in range(ho):
                    s = base + (i + stride * y) * wp + j
                    for x in range(wo):
                        out[o + x] = xf[s + stride * x]
                    o += wo
    return out


@njit
def _col2im_flat(cf, m, hp, wp, kh, kw, stride, ho, wo):
    out = np.zeros(m * hp * wp, dtype=cf.dtype)
    o = 0
    for b in range(m):
        base = b * hp * wp
        for i in range(kh):
            for j in range(kw):
                for y in range(ho):
                    s = base + (i + stride * y) * wp + j
                    if stride == 1:
                        for x in range(wo):
                            out[s + x] += cf[o + x]
                    else:
                        for x in range(wo):
                            out[s + stride * x] += cf[o + x]
                    o += wo
    return out


def _im2col_nb(xp, kh, kw, stride, ho, wo):
    # unit-stride gathers are plain row copies, where numpy's strided copy is faster
    if stride == 1:
        return im2col_numpy(xp, kh, kw, stride, ho, wo)
    n, c, hp, wp = xp.shape
    flat = _im2col_flat(np.ascontiguousarray(xp).reshape(-1), n * c, hp, wp, kh, kw, stride, ho, wo)
    return flat.reshape(n, c, kh, kw, ho, wo)


def _col2im_nb(cols, hp, wp, stride):
    n, c, kh, kw, ho, wo = cols.shape
    flat = _col2im_flat(np.ascontiguousarray(cols).reshape(-1), n * c, hp, wp, kh, kw, stride, ho, wo)
    return flat.reshape(n, c, hp, wp)


@njit
def _dwconv_forward_nb(xp, w, stride, ho, wo):
    n, c = xp.shape[0], xp.shape[1]
    kh, kw = w.shape[1], w.shape[2]
    out = np.zeros((n, c, ho, wo), dtype=xp.dtype)
    for b in range(n):
        for ch in range(c):
            for i in range(kh):
                for j in range(kw):
                    wv = w[ch, i, j]
                    for y in range(ho):
                        row = i + stride * y
                        for x in range(wo):
                            out[b, ch, y, x] += wv * xp[b, ch, row, j + stride * x]
    return out


@njit
def _dwconv_backward_nb(xp, w, g, stride):
    n, c = xp.shape[0], xp.shape[1]
    kh, kw = w.shape[1], w.shape[2]
    ho, wo = g.shape[2], g.shape[3]
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    for ch in range(c):
        for i in range(kh):
            for j in range(kw):
                wv = w[ch, i, j]
                acc = 0.0
                for b in range(n):
                    for y in range(ho):
                        row = i + stride * y
                        for x in range(wo):
                            gv = g[b, ch, y, x]
                            acc += gv * xp[b, ch, row, j + stride * x]
                            gxp[b, ch, row, j + stride * x] += gv * wv
                gw[ch, i, j] = acc
    return gxp, gw


@njit
def _adam_nb(p, g, m, v, lr, b1, b2, bc1, bc2, eps):
    one = p.dtype.type(1.0)
    for i in range(p.size):
        gi = g[i]
        mi = b1 * m[i] + (one - b1) * gi
        vi = b2 * v[i] + (one - b2) * gi * gi
        m[i] = mi
        v[i] = vi
        p[i] -= lr * (mi / bc1) / (np.sqrt(vi / bc2) + eps)


if HAVE_NUMBA:
    NUMBA_KERNELS = SimpleNamespace(
        im2col=_im2col_nb,
        col2im=_col2im_nb,
        dwconv_forward=_dwconv_forward_nb,
        dwconv_backward=_dwconv_backward_nb,
        adam=_adam_nb,
        name="numba",
    )
    KERNELS = NUMBA_KERNELS
else:
    NUMBA_KERNELS = None
    KERNELS = NUMPY_KERNELS
