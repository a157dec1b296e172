import numpy as np
import pytest

from rtfusion import tensor as T
from rtfusion.backbone import EncoderConfig, FeaturePair, align_thr, encode, encoder_param_count, init_encoder
from rtfusion.params import ParamStore


def make(cfg, seed=0, dtype=np.float64):
    p = ParamStore(dtype)
    init_encoder(p, cfg, np.random.default_rng(seed))
    return p


def test_shape_ladder_64(rng):
    cfg = EncoderConfig(in_channels=3)
    feats = encode(T.Tensor(rng.normal(size=(2, 3, 64, 64))), make(cfg), cfg)
    assert feats.low.shape == (2, 32, 8, 8)
    assert feats.high.shape == (2, 128, 2, 2)
    assert feats.skip.shape == (2, 16, 16, 16)


def test_widths_follow_config(rng):
    cfg = EncoderConfig(in_channels=1, stage_widths=(4, 6, 10, 12), stage_depths=(1, 2, 1, 1))
    feats = encode(T.Tensor(rng.normal(size=(1, 1, 32, 96))), make(cfg), cfg)
    assert feats.low.shape == (1, 6, 4, 12)
    assert feats.high.shape == (1, 12, 1, 3)


def test_indivisible_input_rejected():
    cfg = EncoderConfig()
    with pytest.raises(ValueError, match="multiples of 32"):
        encode(T.Tensor(np.zeros((1, 3, 48, 64))), make(cfg), cfg)


def test_bad_channels_rejected():
    cfg = EncoderConfig(in_channels=1)
    with pytest.raises(ValueError):
        encode(T.Tensor(np.zeros((1, 3, 32, 32))), make(cfg), cfg)


@pytest.mark.parametrize("kw", [dict(stage_widths=(1, 2, 3)), dict(stage_depths=(1, 0, 1, 1)), dict(stem_stride=2)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        EncoderConfig(**kw)


def test_zero_input_is_finite():
    cfg = EncoderConfig()
    feats = encode(T.Tensor(np.zeros((1, 3, 64, 64))), make(cfg), cfg)
    for t in feats:
        assert np.all(np.isfinite(t.data))


def test_deterministic(rng):
    cfg = EncoderConfig()
    x = rng.normal(size=(1, 3, 64, 64))
    a = encode(T.Tensor(x), make(cfg, 3), cfg)
    b = encode(T.Tensor(x), make(cfg, 3), cfg)
    for u, v in zip(a, b):
        assert np.array_equal(u.data, v.data)


def test_param_count_matches_init():
    for cfg in (EncoderConfig(), EncoderConfig(in_channels=1, stage_depths=(2, 1, 3, 1))):
        assert make(cfg).num_params() == encoder_param_count(cfg)


def test_branches_do_not_share_parameters(rng):
    from rtfusion.engine.config import ModelConfig
    from rtfusion.engine.model import init_params

    cfg = ModelConfig()
    p = init_params(cfg, np.float64)
    thr = T.Tensor(rng.normal(size=(1, 1, 64, 64)))
    before = encode(thr, p.sub("thr_enc."), cfg.thr_encoder)
    for name in p.names():
        if name.startswith("rgb_enc."):
            p[name].data += 1.0
    after = encode(thr, p.sub("thr_enc."), cfg.thr_encoder)
    for u, v in zip(before, after):
        assert np.array_equal(u.data, v.data)
    rgb_ids = {id(t.data) for n, t in p.items() if n.startswith("rgb_enc.")}
    assert not rgb_ids & {id(t.data) for n, t in p.items() if n.startswith("thr_enc.")}


def test_zero_blocks_reduce_to_downsamplers(rng):
    cfg = EncoderConfig(stage_widths=(4, 8, 8, 16))
    p = make(cfg)
    for name in p.names():
        if ".block" in name:
            p[name].data[...] = 0.0
    x = T.Tensor(rng.normal(size=(1, 3, 64, 64)))
    feats = encode(x, p, cfg)
    from rtfusion.params import conv, norm

    y = norm(p, "stem_norm", conv(p, "stem", x, stride=4))
    outs = [y]
    for s in range(1, 4):
        y = conv(p, f"down{s}.conv", norm(p, f"down{s}.norm", y), stride=2)
        outs.append(y)
    assert np.array_equal(feats.skip.data, outs[0].data)
    assert np.array_equal(feats.low.data, outs[1].data)
    assert np.array_equal(feats.high.data, outs[3].data)


def test_align_equal_resolution_is_identity(rng):
    cfg = EncoderConfig(in_channels=3)
    rgb = encode(T.Tensor(rng.normal(size=(1, 3, 64, 64))), make(cfg), cfg)
    thr_cfg = EncoderConfig(in_channels=1)
    thr = encode(T.Tensor(rng.normal(size=(1, 1, 64, 64))), make(thr_cfg, 1), thr_cfg)
    out = align_thr(thr, rgb)
    assert np.array_equal(out.low.data, thr.low.data)
    assert np.array_equal(out.high.data, thr.high.data)


def test_align_half_resolution_doubles(rng):
    cfg = EncoderConfig(in_channels=3)
    rgb = encode(T.Tensor(rng.normal(size=(1, 3, 128, 128))), make(cfg), cfg)
    thr_cfg = EncoderConfig(in_channels=1)
    thr = encode(T.Tensor(rng.normal(size=(1, 1, 64, 64))), make(thr_cfg, 1), thr_cfg)
    out = align_thr(thr, rgb)
    assert thr.low.shape[2:] == (8, 8)
    assert out.low.shape == rgb.low.shape[:1] + thr.low.shape[1:2] + (16, 16)
    assert out.high.shape[2:] == rgb.high.shape[2:]


def test_align_values_match_interp_oracle(rng):
    low = rng.normal(size=(1, 2, 2, 2))
    fp = FeaturePair(T.Tensor(low), T.Tensor(low))
    target = FeaturePair(T.Tensor(np.zeros((1, 2, 4, 4))), T.Tensor(np.zeros((1, 2, 4, 4))))
    out = align_thr(fp, target)
    # half-pixel centers: output i samples source (i + 0.5) / 2 - 0.5, clamped
    src = np.clip((np.arange(4) + 0.5) / 2 - 0.5, 0, 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, 1)
    f = src - i0
    rows = low[:, :, i0, :] * (1 - f)[None, None, :, None] + low[:, :, i1, :] * f[None, None, :, None]
    want = rows[:, :, :, i0] * (1 - f) + rows[:, :, :, i1] * f
    np.testing.assert_allclose(out.low.data, want, atol=1e-12)
    np.testing.assert_allclose(out.high.data, T.bilinear_interp(T.Tensor(low), 4, 4).data, atol=0)
