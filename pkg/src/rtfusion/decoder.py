"""UNet-style upsampling head producing a positive metric depth map."""

import math
from dataclasses import asdict, dataclass

from rtfusion import tensor as T
from rtfusion.params import conv, conv_params, init_conv, init_norm, norm


@dataclass
class DecoderConfig:
    stage_widths: tuple = (64, 32, 16)
    skip_enabled: bool = True
    d_min: float = 0.1
    d_max: float = 80.0
    head_gain: float = 10.0  # fixed multiplier on the head pre-activation

    def __post_init__(self):
        self.stage_widths = tuple(int(w) for w in self.stage_widths)
        if len(self.stage_widths) != 3 or min(self.stage_widths) < 1:
            raise ValueError(f"decoder needs 3 positive stage widths, got {self.stage_widths}")
        if not self.d_min > 0 or not self.d_max > self.d_min:
            raise ValueError(f"need 0 < d_min < d_max, got d_min={self.d_min} d_max={self.d_max}")
        if not self.head_gain > 0:
            raise ValueError(f"head_gain must be > 0, got {self.head_gain}")

    def to_dict(self):
        d = asdict(self)
        d["stage_widths"] = list(self.stage_widths)
        return d


def init_decoder(p, in_channels, skip_channels, cfg, rng):
    cin = in_channels
    for s, width in enumerate(cfg.stage_widths):
        if s == 0 and cfg.skip_enabled:
            cin += skip_channels
        init_conv(p, f"stage{s}.conv", cin, width, 3, rng)
        init_norm(p, f"stage{s}.norm", width)
        cin = width
    init_conv(p, "head", cin, 1, 1, rng)


def decoder_param_count(in_channels, skip_channels, cfg):
    total, cin = 0, in_channels
    for s, width in enumerate(cfg.stage_widths):
        if s == 0 and cfg.skip_enabled:
            cin += skip_channels
        total += conv_params(cin, width, 3) + 2 * width
        cin = width
    return total + conv_params(cin, 1, 1)


def depth_from_logits(x, cfg):
    """d_min + softplus(x), clamped at d_max."""
    return T.clamp_max(T.add_scalar(T.softplus(x), cfg.d_min), cfg.d_max)


def decode(f_concat, skip, p, cfg, return_logits=False):
    """(N, C, H/8, W/8) fused features -> (N, 1, H, W) depth."""
    y = f_concat
    for s in range(len(cfg.stage_widths)):
        h, w = y.shape[2:]
        y = T.bilinear_interp(y, 2 * h, 2 * w)
        if s == 0 and cfg.skip_enabled:
            if skip is None or skip.shape[0] != y.shape[0] or skip.shape[2:] != y.shape[2:]:
                got = None if skip is None else skip.shape
                raise ValueError(f"decoder skip shape {got} does not match stage grid {y.shape[2:]}")
            y = T.concat_channels(y, skip)
        y = T.gelu(norm(p, f"stage{s}.norm", conv(p, f"stage{s}.conv", y, padding=1)))
    logits = conv(p, "head", y)
    if cfg.head_gain != 1.0:
        logits = T.scalar_mul(logits, cfg.head_gain)
    depth = depth_from_logits(logits, cfg)
    if return_logits:
        return depth, logits
    return depth


SOFTPLUS_ZERO = math.log(2.0)
