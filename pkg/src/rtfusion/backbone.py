"""ConvNeXt-style hierarchical encoders and THR-to-RGB feature alignment."""

from dataclasses import asdict, dataclass
from typing import NamedTuple, Optional

from rtfusion import tensor as T
from rtfusion.params import conv, conv_params, init_conv, init_norm, norm

DW_KERNEL = 7
EXPANSION = 4
REQUIRED_MULTIPLE = 32


@dataclass
class EncoderConfig:
    in_channels: int = 3
    stage_widths: tuple = (16, 32, 64, 128)
    stage_depths: tuple = (1, 1, 1, 1)
    stem_stride: int = 4

    def __post_init__(self):
        self.stage_widths = tuple(int(w) for w in self.stage_widths)
        self.stage_depths = tuple(int(d) for d in self.stage_depths)
        if len(self.stage_widths) != 4 or len(self.stage_depths) != 4:
            raise ValueError("encoder needs exactly 4 stage widths and 4 stage depths")
        if any(w < 1 for w in self.stage_widths) or any(d < 1 for d in self.stage_depths):
            raise ValueError(f"stage widths/depths must be >= 1: {self.stage_widths} {self.stage_depths}")
        if self.in_channels < 1 or self.stem_stride != 4:
            raise ValueError("in_channels must be >= 1 and stem_stride must be 4")

    def to_dict(self):
        d = asdict(self)
        d["stage_widths"] = list(self.stage_widths)
        d["stage_depths"] = list(self.stage_depths)
        return d


class FeaturePair(NamedTuple):
    """Encoder outputs: ``low`` at 1/8, ``high`` at 1/32, ``skip`` (stage 1) at 1/4."""

    low: T.Tensor
    high: T.Tensor
    skip: Optional[T.Tensor] = None


def init_encoder(p, cfg, rng):
    w = cfg.stage_widths
    init_conv(p, "stem", cfg.in_channels, w[0], 4, rng)
    init_norm(p, "stem_norm", w[0])
    for s in range(4):
        if s:
            init_norm(p, f"down{s}.norm", w[s - 1])
            init_conv(p, f"down{s}.conv", w[s - 1], w[s], 2, rng)
        for b in range(cfg.stage_depths[s]):
            blk = f"stage{s}.block{b}"
            init_conv(p, f"{blk}.dw", w[s], w[s], DW_KERNEL, rng, groups=w[s])
            init_norm(p, f"{blk}.norm", w[s])
            init_conv(p, f"{blk}.pw1", w[s], EXPANSION * w[s], 1, rng)
            init_conv(p, f"{blk}.pw2", EXPANSION * w[s], w[s], 1, rng)


def encoder_param_count(cfg):
    w = cfg.stage_widths
    total = conv_params(cfg.in_channels, w[0], 4) + 2 * w[0]
    for s in range(4):
        if s:
            total += 2 * w[s - 1] + conv_params(w[s - 1], w[s], 2)
        block = (
            conv_params(w[s], w[s], DW_KERNEL, groups=w[s])
            + 2 * w[s]
            + conv_params(w[s], EXPANSION * w[s], 1)
            + conv_params(EXPANSION * w[s], w[s], 1)
        )
        total += cfg.stage_depths[s] * block
    return total


def _block(p, blk, x):
    c = x.shape[1]
    y = conv(p, f"{blk}.dw", x, padding=DW_KERNEL // 2, groups=c)
    y = norm(p, f"{blk}.norm", y)
    y = T.gelu(conv(p, f"{blk}.pw1", y))
    y = conv(p, f"{blk}.pw2", y)
    return T.add(x, y)


def encode(x, p, cfg):
    """Run one encoder branch; returns the stage-2 / stage-4 / stage-1 features."""
    if x.ndim != 4 or x.shape[1] != cfg.in_channels:
        raise ValueError(f"encoder expects (N, {cfg.in_channels}, H, W) input, got shape {x.shape}")
    h, w = x.shape[2:]
    if h % REQUIRED_MULTIPLE or w % REQUIRED_MULTIPLE:
        raise ValueError(f"input height/width {h}x{w} must be multiples of {REQUIRED_MULTIPLE}")
    y = norm(p, "stem_norm", conv(p, "stem", x, stride=4))
    outs = []
    for s in range(4):
        if s:
            y = conv(p, f"down{s}.conv", norm(p, f"down{s}.norm", y), stride=2)
        for b in range(cfg.stage_depths[s]):
            y = _block(p, f"stage{s}.block{b}", y)
        outs.append(y)
    return FeaturePair(low=outs[1], high=outs[3], skip=outs[0])


def align_to(feats, low_hw, high_hw, skip_hw=None):
    """Bilinearly resize every map of ``feats`` to the given grid sizes."""
    skip = feats.skip
    if skip is not None and skip_hw is not None:
        skip = T.bilinear_interp(skip, *skip_hw)
    return FeaturePair(
        low=T.bilinear_interp(feats.low, *low_hw),
        high=T.bilinear_interp(feats.high, *high_hw),
        skip=skip,
    )


def align_thr(thr_feats, rgb_feats):
    """Resize THR low/high maps onto the RGB low/high grids."""
    skip_hw = rgb_feats.skip.shape[2:] if rgb_feats.skip is not None else None
    return align_to(thr_feats, rgb_feats.low.shape[2:], rgb_feats.high.shape[2:], skip_hw)
