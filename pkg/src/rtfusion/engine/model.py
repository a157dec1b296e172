"""End-to-end network assembly: encoders -> alignment -> fusion -> decoder."""

import numpy as np

from rtfusion import tensor as T
from rtfusion.backbone import FeaturePair, align_thr, align_to, encode, encoder_param_count, init_encoder
from rtfusion.decoder import decode, decoder_param_count, init_decoder
from rtfusion.egfusion import fuse_all, init_level, level_param_count
from rtfusion.params import ParamStore


def level_grids(cfg):
    """((h, w) at 1/8, (h, w) at 1/32, (h, w) at 1/4) for the configured input size."""
    h, w = cfg.input_size
    return (h // 8, w // 8), (h // 32, w // 32), (h // 4, w // 4)


def init_params(cfg, dtype=np.float32):
    """Fresh parameters; every draw comes from a generator seeded by ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    p = ParamStore(dtype)
    widths = cfg.rgb_encoder.stage_widths
    (lh, lw), (hh, hw), _ = level_grids(cfg)
    init_encoder(p.sub("rgb_enc."), cfg.rgb_encoder, rng)
    init_encoder(p.sub("thr_enc."), cfg.thr_encoder, rng)
    init_level(p.sub("fuse.low."), widths[1], lh, lw, cfg.fusion, rng)
    init_level(p.sub("fuse.high."), widths[3], hh, hw, cfg.fusion, rng)
    init_decoder(p.sub("dec."), widths[1] + widths[3], widths[0], cfg.decoder, rng)
    return p


def param_count(cfg):
    """Closed-form parameter total for ``cfg`` (independent of ``init_params``)."""
    widths = cfg.rgb_encoder.stage_widths
    (lh, lw), (hh, hw), _ = level_grids(cfg)
    return (
        encoder_param_count(cfg.rgb_encoder)
        + encoder_param_count(cfg.thr_encoder)
        + level_param_count(widths[1], lh, lw, cfg.fusion)
        + level_param_count(widths[3], hh, hw, cfg.fusion)
        + decoder_param_count(widths[1] + widths[3], widths[0], cfg.decoder)
    )


def _zeros_like_pair(fp):
    z = lambda t: None if t is None else T.Tensor(np.zeros(t.shape, dtype=t.dtype))  # noqa: E731
    return FeaturePair(low=z(fp.low), high=z(fp.high), skip=z(fp.skip))


def forward(rgb, thr, p, cfg, return_logits=False):
    """Depth map (N, 1, H, W) from RGB (N, 3, H, W) and THR (N, 1, Ht, Wt).

    rgb_only / thr_only runs keep the full fusion path but substitute zeros for
    the missing stream and switch the edge gate off.
    """
    rgb = T.as_tensor(rgb)
    thr = T.as_tensor(thr)
    if tuple(rgb.shape[2:]) != cfg.input_size:
        raise ValueError(f"rgb spatial size {rgb.shape[2:]} != configured input_size {cfg.input_size}")
    if thr.shape[0] != rgb.shape[0]:
        raise ValueError(f"batch sizes differ: rgb {rgb.shape[0]}, thr {thr.shape[0]}")
    low_hw, high_hw, skip_hw = level_grids(cfg)
    fusion = p.sub("fuse.")

    if cfg.modality == "fused":
        rgb_f = encode(rgb, p.sub("rgb_enc."), cfg.rgb_encoder)
        thr_a = align_thr(encode(thr, p.sub("thr_enc."), cfg.thr_encoder), rgb_f)
        f_concat = fuse_all(rgb_f, thr_a, fusion, cfg.fusion)
        skip = rgb_f.skip
    elif cfg.modality == "rgb_only":
        rgb_f = encode(rgb, p.sub("rgb_enc."), cfg.rgb_encoder)
        f_concat = fuse_all(rgb_f, _zeros_like_pair(rgb_f), fusion, cfg.fusion, esem_mode="none")
        skip = rgb_f.skip
    else:
        thr_a = align_to(encode(thr, p.sub("thr_enc."), cfg.thr_encoder), low_hw, high_hw, skip_hw)
        f_concat = fuse_all(thr_a, _zeros_like_pair(thr_a), fusion, cfg.fusion, esem_mode="none")
        skip = thr_a.skip
    return decode(f_concat, skip, p.sub("dec."), cfg.decoder, return_logits=return_logits)


def predict(rgb, thr, p, cfg):
    with T.no_grad():
        return forward(rgb, thr, p, cfg).data
