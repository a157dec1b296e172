"""Numba vs pure-numpy kernel timings on the shapes the default model uses.

    python benchmarks/bench_kernels.py [--repeat 50]

Also times one full training step under whichever backend is active
(set RTFUSION_DISABLE_NUMBA=1 to time the numpy step).
"""

import argparse
import time

import numpy as np

from rtfusion._accel import backend
from rtfusion.tensor import kernels as K

# (name, kind, N, C, H, W, k, stride, pad)
CASES = [
    ("dec0 3x3 176ch 16x16", "im2col", 4, 176, 16, 16, 3, 1, 1),
    ("dec2 3x3 32ch 64x64", "im2col", 4, 32, 64, 64, 3, 1, 1),
    ("mca down 3x3 s2 32ch 8x8", "im2col", 4, 32, 8, 8, 3, 2, 1),
    ("stem 4x4 s4 3ch 64x64", "im2col", 4, 3, 64, 64, 4, 4, 0),
    ("dw 7x7 16ch 16x16", "dw", 4, 16, 16, 16, 7, 1, 3),
    ("dw 7x7 32ch 8x8", "dw", 4, 32, 8, 8, 7, 1, 3),
]


def _time(fn, repeat):
    fn()
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - t0) / repeat * 1e3


def bench_case(ks, kind, n, c, h, w, k, stride, pad, repeat, rng):
    xp = rng.standard_normal((n, c, h + 2 * pad, w + 2 * pad)).astype(np.float32)
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    if kind == "im2col":
        cols = ks.im2col(xp, k, k, stride, ho, wo)
        fwd = _time(lambda: ks.im2col(xp, k, k, stride, ho, wo), repeat)
        bwd = _time(lambda: ks.col2im(cols, xp.shape[2], xp.shape[3], stride), repeat)
    else:
        wt = rng.standard_normal((c, k, k)).astype(np.float32)
        g = rng.standard_normal((n, c, ho, wo)).astype(np.float32)
        fwd = _time(lambda: ks.dwconv_forward(xp, wt, stride, ho, wo), repeat)
        bwd = _time(lambda: ks.dwconv_backward(xp, wt, g, stride), repeat)
    return fwd, bwd


def bench_adam(ks, size, repeat, rng):
    p = rng.standard_normal(size).astype(np.float32)
    g = rng.standard_normal(size).astype(np.float32)
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    c = np.float32
    return _time(lambda: ks.adam(p, g, m, v, c(1e-3), c(0.9), c(0.999), c(0.1), c(0.001), c(1e-8)), repeat)


def bench_step(repeat):
    from rtfusion import tensor as T
    from rtfusion.engine.config import ModelConfig
    from rtfusion.engine.model import forward, init_params
    from rtfusion.loss import total_loss

    cfg = ModelConfig()
    p = init_params(cfg)
    rng = np.random.default_rng(0)
    rgb = rng.random((4, 3, 64, 64)).astype(np.float32)
    thr = rng.random((4, 1, 32, 32)).astype(np.float32)
    gt = rng.uniform(1, 40, (4, 1, 64, 64)).astype(np.float32)
    mask = np.ones_like(gt)

    def step():
        p.zero_grad()
        T.backward(total_loss(forward(rgb, thr, p, cfg), gt, mask, rgb))

    return _time(step, repeat)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=30)
    ap.add_argument("--step-repeat", type=int, default=10)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    sets = [("numpy", K.NUMPY_KERNELS)]
    if K.NUMBA_KERNELS is not None:
        sets.append(("numba", K.NUMBA_KERNELS))
    print(f"{'case':<28}" + "".join(f"{name + ' fwd':>12}{name + ' bwd':>12}" for name, _ in sets) + "   (ms)")
    for name, kind, *dims in CASES:
        row = f"{name:<28}"
        for _, ks in sets:
            fwd, bwd = bench_case(ks, kind, *dims, args.repeat, rng)
            row += f"{fwd:>12.3f}{bwd:>12.3f}"
        print(row)
    from rtfusion.engine.config import ModelConfig
    from rtfusion.engine.model import param_count

    size = param_count(ModelConfig())
    row = f"{'adam ' + str(size) + ' params':<28}"
    for _, ks in sets:
        row += f"{bench_adam(ks, size, args.repeat, rng):>12.3f}{'':>12}"
    print(row)
    print(f"\nfull train step (batch 4, 64x64), backend={backend()}: {bench_step(args.step_repeat):.1f} ms")


if __name__ == "__main__":
    main()
