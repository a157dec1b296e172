"""Fixed turbo-like false-color ramp for depth visualization.

The ramp is the lookup table below: nine RGB anchors at evenly spaced
positions t = 0, 1/8, ..., 1, linearly interpolated per channel. Depth maps
to t = (d - d_min) / (d_max - d_min), clipped to [0, 1]; near is dark blue,
far is dark red.
"""

import numpy as np

TURBO_LUT = np.array(
    [
        [0.190, 0.072, 0.232],
        [0.255, 0.370, 0.861],
        [0.157, 0.680, 0.937],
        [0.102, 0.894, 0.712],
        [0.463, 0.990, 0.345],
        [0.820, 0.912, 0.204],
        [0.996, 0.650, 0.188],
        [0.900, 0.300, 0.050],
        [0.480, 0.016, 0.010],
    ]
)


def colorize(depth, d_min, d_max):
    """(1, H, W) or (H, W) depth -> (3, H, W) RGB in [0, 1]."""
    d = np.asarray(depth, dtype=np.float64)
    if d.ndim == 3:
        d = d[0]
    t = np.clip((d - d_min) / (d_max - d_min), 0.0, 1.0)
    knots = np.linspace(0.0, 1.0, len(TURBO_LUT))
    return np.stack([np.interp(t, knots, TURBO_LUT[:, c]) for c in range(3)])
