"""Procedural paired RGB / thermal / depth scenes.

A scene is a far backdrop, a ground plane below a horizon and a handful of
fronto-parallel rectangles and ellipses standing on the ground. Geometry and
temperatures come from one random stream that does not depend on the
scenario, so day/night/rain renders of one seed share depth and THR exactly;
only the RGB image changes with the scenario.
"""

from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

SCENARIOS = ("day", "night", "rain")

_STREAM_GEOMETRY = 0
_STREAM_THERMAL = 1
_STREAM_RGB = 2


@dataclass
class SceneSpec:
    height: int = 64
    width: int = 64
    thr_scale: int = 2
    object_count: tuple = (2, 5)
    depth_range: tuple = (1.0, 40.0)
    texture_amplitude: float = 0.25
    illumination: dict = field(default_factory=lambda: {"day": 1.0, "night": 0.08, "rain": 0.6})
    rgb_noise: dict = field(default_factory=lambda: {"day": 0.01, "night": 0.05, "rain": 0.03})
    thr_noise: float = 0.02
    thermal_contrast: tuple = (0.15, 0.5)
    label_dropout: float = 0.05

    def __post_init__(self):
        self.object_count = tuple(int(v) for v in self.object_count)
        self.depth_range = tuple(float(v) for v in self.depth_range)
        self.thermal_contrast = tuple(float(v) for v in self.thermal_contrast)
        lo, hi = self.depth_range
        if not 0 < lo < hi:
            raise ValueError(f"depth_range must satisfy 0 < lo < hi, got {self.depth_range}")
        if not 1 <= self.object_count[0] <= self.object_count[1]:
            raise ValueError(f"object_count range {self.object_count} is empty or nonpositive")
        if self.height % self.thr_scale or self.width % self.thr_scale:
            raise ValueError(f"image size {self.height}x{self.width} not divisible by thr_scale={self.thr_scale}")
        if not self.thermal_contrast[0] <= self.thermal_contrast[1]:
            raise ValueError(f"thermal_contrast range {self.thermal_contrast} is empty")
        for name in ("illumination", "rgb_noise"):
            table = getattr(self, name)
            missing = set(SCENARIOS) - set(table)
            if missing:
                raise ValueError(f"{name} lacks entries for {sorted(missing)}")
            if any(v < 0 for v in table.values()):
                raise ValueError(f"{name} values must be >= 0")
        if self.texture_amplitude < 0 or self.thr_noise < 0 or not 0 <= self.label_dropout < 1:
            raise ValueError("texture_amplitude, thr_noise must be >= 0 and label_dropout in [0, 1)")

    def to_dict(self):
        d = asdict(self)
        for k in ("object_count", "depth_range", "thermal_contrast"):
            d[k] = list(d[k])
        return d


class SamplePair(NamedTuple):
    rgb: np.ndarray     # (3, H, W) in [0, 1]
    thr: np.ndarray     # (1, Ht, Wt) in [0, 1]
    depth: np.ndarray   # (1, H, W) metres, 0 where unlabeled
    mask: np.ndarray    # (1, H, W) in {0, 1}
    scenario: str
    seed: int


def _rng(seed, stream, scenario_idx=0):
    return np.random.default_rng(np.random.SeedSequence([int(seed), stream, scenario_idx]))


def _layout(spec, rng):
    """Depth z-buffer, per-pixel object id (-1 ground, -2 backdrop), object table."""
    h, w = spec.height, spec.width
    d_lo, d_hi = spec.depth_range
    horizon = h * rng.uniform(0.3, 0.45)
    near = max(d_lo * 2.0, d_lo)
    k = near * (h - horizon)  # ground depth at the bottom row is ``near``
    rows = np.arange(h) + 0.5
    below = rows - horizon
    ground = np.where(below > 0, k / np.maximum(below, 1e-6), d_hi)
    ground = np.clip(ground, d_lo, d_hi)
    depth = np.repeat(ground[:, None], w, axis=1)
    ident = np.where((below > 0)[:, None], -1, -2).repeat(w, axis=1)

    n_obj = int(rng.integers(spec.object_count[0], spec.object_count[1] + 1))
    yy, xx = np.mgrid[0:h, 0:w] + 0.5
    objects = []
    obj_lo, obj_hi = max(d_lo, 3.0), min(d_hi, 35.0)
    for i in range(n_obj):
        d = rng.uniform(obj_lo, obj_hi)
        size_h = rng.uniform(2.0, 5.0) * k / d / 2.0
        size_w = size_h * rng.uniform(0.4, 1.6)
        base = horizon + k / d
        cx = rng.uniform(0, w)
        top = base - size_h
        ellipse = rng.random() < 0.5
        if ellipse:
            cy = base - size_h / 2.0
            inside = ((yy - cy) / (size_h / 2.0)) ** 2 + ((xx - cx) / (size_w / 2.0)) ** 2 <= 1.0
        else:
            inside = (yy >= top) & (yy <= base) & (np.abs(xx - cx) <= size_w / 2.0)
        closer = inside & (d < depth)
        depth[closer] = d
        ident[closer] = i
        objects.append(
            {
                "depth": d,
                "albedo": rng.uniform(0.15, 0.95, size=3),
                "period": rng.uniform(3.0, 9.0),
                "phase": rng.uniform(0, 2 * np.pi),
                "temp_sign": 1.0 if rng.random() < 0.7 else -1.0,
                "contrast": rng.uniform(*spec.thermal_contrast),
            }
        )
    dropout = rng.random((h, w)) < spec.label_dropout
    return depth, ident, objects, dropout, horizon


def _render_rgb(spec, depth, ident, objects, horizon, scenario, rng):
    h, w = depth.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    amp = spec.texture_amplitude
    img = np.empty((3, h, w))
    sky = np.array([0.55, 0.65, 0.82])[:, None, None] * (1.0 - 0.3 * yy / max(horizon, 1.0))
    img[:] = sky
    g = ident == -1
    stripes = 1.0 + amp * np.sign(np.sin(2 * np.pi * 6.0 / np.maximum(depth, 1e-3)))
    ground_col = np.array([0.42, 0.40, 0.36])[:, None, None] * stripes
    img[:, g] = ground_col[:, g]
    for i, ob in enumerate(objects):
        sel = ident == i
        if not sel.any():
            continue
        tex = 1.0 + amp * np.sin(2 * np.pi * (xx + yy) / ob["period"] + ob["phase"])
        img[:, sel] = ob["albedo"][:, None] * tex[sel][None, :]
    haze = 1.0 - np.exp(-depth / 60.0)
    img = img * (1.0 - haze) + np.array([0.7, 0.72, 0.75])[:, None, None] * haze
    img = img * spec.illumination[scenario]
    if scenario == "rain":
        streaks = np.zeros((h, w))
        for _ in range(max(1, w // 6)):
            x0 = int(rng.integers(0, w))
            y0 = int(rng.integers(0, h))
            length = int(rng.integers(h // 8 + 1, h // 3 + 2))
            streaks[y0 : y0 + length, x0] = rng.uniform(0.5, 0.9)
        img = np.where(streaks[None] > 0, 0.4 * img + 0.6 * streaks[None], img)
        pad = np.pad(img, ((0, 0), (1, 1), (1, 1)), mode="edge")
        img = sum(pad[:, i : i + h, j : j + w] for i in range(3) for j in range(3)) / 9.0
    img = img + rng.normal(0.0, spec.rgb_noise[scenario], size=img.shape)
    return np.clip(img, 0.0, 1.0)


def _render_thr(spec, depth, ident, objects, rng):
    h, w = depth.shape
    temp = np.full((h, w), 0.15)
    g = ident == -1
    temp[g] = 0.35 + 0.15 * np.exp(-depth[g] / 15.0)
    for i, ob in enumerate(objects):
        sel = ident == i
        temp[sel] = 0.4 + ob["temp_sign"] * ob["contrast"]
    att = np.exp(-depth / 80.0)
    temp = temp * att + 0.2 * (1.0 - att)
    s = spec.thr_scale
    small = temp.reshape(h // s, s, w // s, s).mean(axis=(1, 3))
    small = small + rng.normal(0.0, spec.thr_noise, size=small.shape)
    return np.clip(small, 0.0, 1.0)[None]


def generate(spec, seed, scenario):
    """One SamplePair, fully determined by (spec, seed, scenario)."""
    if scenario not in SCENARIOS:
        raise ValueError(f"scenario must be one of {SCENARIOS}, got {scenario!r}")
    geo = _rng(seed, _STREAM_GEOMETRY)
    depth, ident, objects, dropout, horizon = _layout(spec, geo)
    thr = _render_thr(spec, depth, ident, objects, _rng(seed, _STREAM_THERMAL))
    rgb = _render_rgb(spec, depth, ident, objects, horizon, scenario, _rng(seed, _STREAM_RGB, SCENARIOS.index(scenario)))
    mask = (~dropout).astype(np.float32)
    return SamplePair(
        rgb=rgb.astype(np.float32),
        thr=thr.astype(np.float32),
        depth=(depth * mask).astype(np.float32)[None],
        mask=mask[None],
        scenario=scenario,
        seed=int(seed),
    )
