"""Edge-guided RGB/THR fusion: positional embeddings, cross-modal attention,
edge saliency gating and the two-level feature concatenation."""

import math
from dataclasses import asdict, dataclass

import numpy as np

from rtfusion import tensor as T
from rtfusion.params import conv, conv_params, init_conv, init_norm, norm

MODES = ("egfusion", "concat")
ESEM_MODES = ("learned", "sobel", "none")


@dataclass
class FusionConfig:
    mode: str = "egfusion"
    mca_enabled: bool = True
    esem_mode: str = "learned"
    attn_downsample_stride: int = 2

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"fusion mode must be one of {MODES}, got {self.mode!r}")
        if self.esem_mode not in ESEM_MODES:
            raise ValueError(f"esem mode must be one of {ESEM_MODES}, got {self.esem_mode!r}")
        if self.attn_downsample_stride < 1:
            raise ValueError("attn_downsample_stride must be >= 1")

    def to_dict(self):
        return asdict(self)


# ---------------------------------------------------------------------------
# parameters


def init_level(p, c, h, w, cfg, rng):
    """Parameters of one fusion level with ``c`` channels on an ``h`` x ``w`` grid."""
    if cfg.mode == "concat":
        init_conv(p, "concat_proj", 2 * c, c, 1, rng)
        return
    p.add("pe", np.zeros((1, c, h, w)))
    if cfg.mca_enabled:
        init_conv(p, "mca.q_proj", c, c, 1, rng)
        init_conv(p, "mca.kv_proj", c, 2 * c, 1, rng)
        init_conv(p, "mca.q_down", c, c, 3, rng)
        init_conv(p, "mca.kv_down", 2 * c, 2 * c, 3, rng, groups=2)
    if cfg.esem_mode == "learned":
        init_conv(p, "esem.w1", c, c, 3, rng)
        init_conv(p, "esem.w2", c, 1, 1, rng)
    init_conv(p, "fusion_conv", c, c, 3, rng)
    init_norm(p, "fusion_norm", c)


def level_param_count(c, h, w, cfg):
    if cfg.mode == "concat":
        return conv_params(2 * c, c, 1)
    total = c * h * w
    if cfg.mca_enabled:
        total += conv_params(c, c, 1) + conv_params(c, 2 * c, 1)
        total += conv_params(c, c, 3) + conv_params(2 * c, 2 * c, 3, groups=2)
    if cfg.esem_mode == "learned":
        total += conv_params(c, c, 3) + conv_params(c, 1, 1)
    return total + conv_params(c, c, 3) + 2 * c


# ---------------------------------------------------------------------------
# operations


def add_pe(f_rgb, f_thr, pe):
    """Add the level's shared positional embedding to both modalities."""
    want = pe.shape[1:]
    for name, f in (("rgb", f_rgb), ("thr", f_thr)):
        if f.ndim != 4 or f.shape[1:] != want:
            raise ValueError(f"add_pe: {name} feature shape {f.shape} does not match embedding (C, H, W) = {want}")
    return T.add(f_rgb, pe), T.add(f_thr, pe)


def mca(f_rgb_hat, f_thr_hat, p, stride=2, return_attention=False):
    """RGB queries attend over THR keys/values at reduced resolution; residual output.

    Tokens are the flattened (row-major) positions of the downsampled maps and
    the channel vector is the embedding, single head, scale 1/sqrt(C).
    """
    if f_rgb_hat.shape != f_thr_hat.shape:
        raise ValueError(f"mca: rgb shape {f_rgb_hat.shape} != thr shape {f_thr_hat.shape}")
    n, c, h, w = f_rgb_hat.shape
    q = conv(p, "q_proj", f_rgb_hat)
    kv = conv(p, "kv_proj", f_thr_hat)
    q_bar = conv(p, "q_down", q, stride=stride, padding=1)
    kv_bar = conv(p, "kv_down", kv, stride=stride, padding=1, groups=2)
    k_bar, v_bar = T.split_channels(kv_bar, (c, c))
    hd, wd = q_bar.shape[2:]

    q_tok = T.flatten_spatial(q_bar)                         # (N, L, C)
    k_tok_t = T.transpose(T.flatten_spatial(k_bar), (0, 2, 1))  # (N, C, L)
    v_tok = T.flatten_spatial(v_bar)
    scores = T.scalar_mul(T.matmul(q_tok, k_tok_t), 1.0 / math.sqrt(c))
    attn = T.softmax_lastdim(scores)
    o = T.unflatten_spatial(T.matmul(attn, v_tok), hd, wd)
    o_up = T.bilinear_interp(o, h, w)
    out = T.add(f_rgb_hat, o_up)
    if return_attention:
        return out, attn
    return out


SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])


def _sobel_grads(m):
    """Sobel x/y responses of (N, H, W) maps with replicate padding."""
    h, w = m.shape[1:]
    mp = np.pad(m, ((0, 0), (1, 1), (1, 1)), mode="edge")
    gx = np.zeros_like(m)
    gy = np.zeros_like(m)
    for i in range(3):
        for j in range(3):
            win = mp[:, i : i + h, j : j + w]
            gx += SOBEL_X[i, j] * win
            gy += SOBEL_X[j, i] * win
    return gx, gy


def sobel_edge_map(f):
    """Min-max normalized Sobel magnitude of the channel mean, (N, 1, H, W) in [0, 1].

    Replicate padding so a constant map has exactly zero response; images with
    no spread in magnitude map to all zeros. The kernel is fixed, but gradients
    flow back into ``f`` (subgradient 0 where the magnitude is 0).
    """
    f = T.as_tensor(f)
    d = f.data
    n, c, h, w = d.shape
    m = d.astype(np.float64).mean(axis=1)
    gx, gy = _sobel_grads(m)
    mag = np.sqrt(gx * gx + gy * gy)
    flat = mag.reshape(n, -1)
    i_lo = flat.argmin(axis=1)
    i_hi = flat.argmax(axis=1)
    rows = np.arange(n)
    lo = flat[rows, i_lo][:, None, None]
    span = flat[rows, i_hi][:, None, None] - lo
    live = span > 0
    safe = np.where(live, span, 1.0)
    e = np.where(live, (mag - lo) / safe, 0.0)

    def bw(g):
        g = g[:, 0].astype(np.float64)
        gm = np.where(live, g / safe, 0.0)
        gflat = gm.reshape(n, -1)
        # min and max positions also move lo and span
        g_lo = np.where(live[:, 0, 0], (g * (e - 1.0)).reshape(n, -1).sum(axis=1) / safe[:, 0, 0], 0.0)
        g_hi = np.where(live[:, 0, 0], -(g * e).reshape(n, -1).sum(axis=1) / safe[:, 0, 0], 0.0)
        np.add.at(gflat, (rows, i_lo), g_lo)
        np.add.at(gflat, (rows, i_hi), g_hi)
        inv = np.where(mag > 0, 1.0 / np.where(mag > 0, mag, 1.0), 0.0)
        ggx, ggy = gm * gx * inv, gm * gy * inv
        gp = np.zeros((n, h + 2, w + 2))
        for i in range(3):
            for j in range(3):
                gp[:, i : i + h, j : j + w] += SOBEL_X[i, j] * ggx + SOBEL_X[j, i] * ggy
        # fold the replicated border back onto the edge pixels
        gp[:, 1, :] += gp[:, 0, :]
        gp[:, h, :] += gp[:, h + 1, :]
        gp[:, :, 1] += gp[:, :, 0]
        gp[:, :, w] += gp[:, :, w + 1]
        gmean = gp[:, 1 : h + 1, 1 : w + 1] / c
        return (np.broadcast_to(gmean[:, None], d.shape).astype(d.dtype),)

    return T.Tensor._result(e[:, None].astype(d.dtype), (f,), bw, "sobel_edge_map")


def edge_map(f_thr_hat, p, mode):
    if mode == "learned":
        hidden = T.relu(conv(p, "w1", f_thr_hat, padding=1))
        return T.sigmoid(conv(p, "w2", hidden))
    if mode == "sobel":
        return sobel_edge_map(f_thr_hat)
    raise ValueError(f"no edge map for esem mode {mode!r}")


def esem(f_thr_hat, f_cross, p, mode="learned"):
    """Gate the THR features by an edge map and add them onto the cross features."""
    if mode not in ESEM_MODES:
        raise ValueError(f"esem mode must be one of {ESEM_MODES}, got {mode!r}")
    if f_thr_hat.shape != f_cross.shape:
        raise ValueError(f"esem: thr shape {f_thr_hat.shape} != cross shape {f_cross.shape}")
    if mode == "none":
        return f_cross
    e = edge_map(f_thr_hat, p, mode)
    return T.add(f_cross, T.mul(e, f_thr_hat))


def fusion_conv(p, x):
    return T.gelu(norm(p, "fusion_norm", conv(p, "fusion_conv", x, padding=1)))


def fuse_level(f_rgb, f_thr_aligned, p, cfg, esem_mode=None):
    """Fuse one level. ``esem_mode`` overrides ``cfg.esem_mode`` (single-modality runs)."""
    if f_rgb.shape != f_thr_aligned.shape:
        raise ValueError(f"fuse_level: rgb shape {f_rgb.shape} != aligned thr shape {f_thr_aligned.shape}")
    if cfg.mode == "concat":
        return conv(p, "concat_proj", T.concat_channels(f_rgb, f_thr_aligned))
    mode = cfg.esem_mode if esem_mode is None else esem_mode
    rgb_hat, thr_hat = add_pe(f_rgb, f_thr_aligned, p["pe"])
    cross = mca(rgb_hat, thr_hat, p.sub("mca."), cfg.attn_downsample_stride) if cfg.mca_enabled else rgb_hat
    enhanced = esem(thr_hat, cross, p.sub("esem."), mode)
    return fusion_conv(p, enhanced)


def fuse_all(rgb, thr_aligned, p, cfg, esem_mode=None):
    """Fuse both levels and concatenate [low; upsampled high] at the low-level grid."""
    low = fuse_level(rgb.low, thr_aligned.low, p.sub("low."), cfg, esem_mode)
    high = fuse_level(rgb.high, thr_aligned.high, p.sub("high."), cfg, esem_mode)
    high_up = T.bilinear_interp(high, *low.shape[2:])
    return T.concat_channels(low, high_up)
