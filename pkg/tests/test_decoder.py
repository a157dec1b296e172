import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rtfusion import tensor as T
from rtfusion.decoder import DecoderConfig, decode, decoder_param_count, depth_from_logits, init_decoder
from rtfusion.params import ParamStore


def make(cin=12, skip=4, seed=0, perturb=0.0, **kw):
    cfg = DecoderConfig(**kw)
    rng = np.random.default_rng(seed)
    p = ParamStore(np.float64)
    init_decoder(p, cin, skip, cfg, rng)
    for _, t in p.items():
        t.data = t.data + rng.normal(0, perturb, size=t.shape)
    return p, cfg


def test_shape_ladder(rng):
    p, cfg = make(stage_widths=(8, 8, 4))
    out = decode(T.Tensor(rng.normal(size=(2, 12, 8, 8))), T.Tensor(rng.normal(size=(2, 4, 16, 16))), p, cfg)
    assert out.shape == (2, 1, 64, 64)


def test_zero_logits_give_dmin_plus_ln2():
    cfg = DecoderConfig()
    d = depth_from_logits(T.Tensor(np.zeros((1, 1, 4, 4))), cfg)
    np.testing.assert_allclose(d.data, 0.1 + math.log(2.0), rtol=0, atol=1e-15)


def test_zero_head_weights_give_dmin_plus_ln2(rng):
    p, cfg = make(perturb=0.5)
    p["head.weight"].data[...] = 0.0
    p["head.bias"].data[...] = 0.0
    out, logits = decode(T.Tensor(rng.normal(size=(1, 12, 4, 4))), T.Tensor(rng.normal(size=(1, 4, 8, 8))), p, cfg, return_logits=True)
    assert np.all(logits.data == 0.0)
    np.testing.assert_allclose(out.data, cfg.d_min + math.log(2.0), atol=1e-15)


@settings(max_examples=20)
@given(st.integers(0, 10_000), st.floats(0.1, 30.0))
def test_depth_in_range(seed, scale):
    r = np.random.default_rng(seed)
    p, cfg = make(seed=seed, perturb=0.3)
    out = decode(T.Tensor(r.normal(0, scale, size=(1, 12, 4, 4))), T.Tensor(r.normal(0, scale, size=(1, 4, 8, 8))), p, cfg)
    assert np.all(np.isfinite(out.data))
    assert out.data.min() >= cfg.d_min and out.data.max() <= cfg.d_max


def test_clamp_at_dmax():
    cfg = DecoderConfig(d_max=5.0)
    d = depth_from_logits(T.Tensor(np.array([[[[100.0, -100.0]]]])), cfg)
    assert d.data[0, 0, 0, 0] == 5.0
    assert 0.1 <= d.data[0, 0, 0, 1] < 0.1 + 1e-6


def test_skip_mismatch_rejected(rng):
    p, cfg = make()
    with pytest.raises(ValueError, match="skip"):
        decode(T.Tensor(rng.normal(size=(1, 12, 4, 4))), T.Tensor(rng.normal(size=(1, 4, 4, 4))), p, cfg)
    with pytest.raises(ValueError, match="skip"):
        decode(T.Tensor(rng.normal(size=(1, 12, 4, 4))), None, p, cfg)


def test_skip_disabled_ignores_skip(rng):
    p, cfg = make(skip_enabled=False)
    out = decode(T.Tensor(rng.normal(size=(1, 12, 4, 4))), None, p, cfg)
    assert out.shape == (1, 1, 32, 32)


def test_param_count_and_skip_delta():
    p_on, cfg_on = make()
    p_off, cfg_off = make(skip_enabled=False)
    assert p_on.num_params() == decoder_param_count(12, 4, cfg_on)
    assert p_off.num_params() == decoder_param_count(12, 4, cfg_off)
    # the first stage conv widens by the skip channels: 4 inputs x 3x3 x width
    assert p_on.num_params() - p_off.num_params() == 4 * 9 * cfg_on.stage_widths[0]


@pytest.mark.parametrize("kw", [dict(d_min=0.0), dict(d_min=2.0, d_max=1.0), dict(stage_widths=(8, 8)), dict(head_gain=0.0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        DecoderConfig(**kw)
