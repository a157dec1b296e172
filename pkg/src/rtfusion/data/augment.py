"""Joint crop / flip / brightness augmentation."""

from typing import NamedTuple

import numpy as np

from rtfusion.data.synth import SamplePair

BRIGHTNESS_RANGE = (0.8, 1.2)


class AugmentParams(NamedTuple):
    dy: int
    dx: int
    crop_h: int
    crop_w: int
    flip: bool
    brightness: float


def draw(sample, seed, crop=None):
    """Sample augmentation parameters; crop offsets are multiples of the THR scale."""
    h, w = sample.rgb.shape[1:]
    ch, cw = crop if crop is not None else (h, w)
    if ch > h or cw > w:
        raise ValueError(f"crop {ch}x{cw} is larger than image {h}x{w}")
    if ch % 32 or cw % 32:
        raise ValueError(f"crop {ch}x{cw} must be a multiple of 32")
    s = thr_scale(sample)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 7]))
    dy = s * int(rng.integers(0, (h - ch) // s + 1))
    dx = s * int(rng.integers(0, (w - cw) // s + 1))
    flip = bool(rng.random() < 0.5)
    u = float(rng.uniform(*BRIGHTNESS_RANGE))
    return AugmentParams(dy, dx, ch, cw, flip, u)


def thr_scale(sample):
    h = sample.rgb.shape[1]
    ht = sample.thr.shape[1]
    if h % ht:
        raise ValueError(f"RGB height {h} is not a multiple of THR height {ht}")
    return h // ht


def apply(sample, params):
    """Apply one geometry to rgb/thr/depth/mask; brightness touches RGB only."""
    s = thr_scale(sample)
    dy, dx, ch, cw = params.dy, params.dx, params.crop_h, params.crop_w
    rgb = sample.rgb[:, dy : dy + ch, dx : dx + cw]
    depth = sample.depth[:, dy : dy + ch, dx : dx + cw]
    mask = sample.mask[:, dy : dy + ch, dx : dx + cw]
    thr = sample.thr[:, dy // s : (dy + ch) // s, dx // s : (dx + cw) // s]
    if params.flip:
        rgb, thr, depth, mask = (a[:, :, ::-1] for a in (rgb, thr, depth, mask))
    if params.brightness != 1.0:
        rgb = np.clip(rgb * np.float32(params.brightness), 0.0, 1.0)
    return SamplePair(
        rgb=np.ascontiguousarray(rgb, dtype=np.float32),
        thr=np.ascontiguousarray(thr, dtype=np.float32),
        depth=np.ascontiguousarray(depth),
        mask=np.ascontiguousarray(mask),
        scenario=sample.scenario,
        seed=sample.seed,
    )


def augment(sample, seed, crop=None):
    return apply(sample, draw(sample, seed, crop))


def center_crop(sample, crop):
    h, w = sample.rgb.shape[1:]
    s = thr_scale(sample)
    dy = s * (((h - crop[0]) // 2) // s)
    dx = s * (((w - crop[1]) // 2) // s)
    return apply(sample, AugmentParams(dy, dx, crop[0], crop[1], False, 1.0))
