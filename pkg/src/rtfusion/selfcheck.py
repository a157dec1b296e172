"""Self-verification suites: gradients, metric oracle, file formats.

Each suite returns a list of ``Check`` rows; ``run`` times the suites and
reports whether everything passed. The CLI ``selfcheck`` command and the
acceptance script both drive these.
"""

import math
import os
import tempfile
import time
from typing import NamedTuple

import numpy as np

from rtfusion import metrics
from rtfusion import tensor as T
from rtfusion.data import io
from rtfusion.data.synth import SceneSpec, generate
from rtfusion.egfusion import FusionConfig, fuse_level, init_level
from rtfusion.params import ParamStore
from rtfusion.tensor.gradcheck import gradcheck

GRAD_H = 1e-3
PRIMITIVE_TOL = 1e-4
MODEL_TOL = 1e-3
ORACLE_TOL = 1e-12


class Check(NamedTuple):
    suite: str
    name: str
    passed: bool
    value: float
    limit: float

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.suite}: {self.name} ({self.value:.3g} vs limit {self.limit:.3g})"


# ---------------------------------------------------------------------------
# gradients


def _away_from_zero(rng, shape, gap=0.05):
    x = rng.uniform(-1, 1, size=shape)
    return np.where(np.abs(x) < gap, np.sign(x + 1e-12) * gap, x)


def _probe(out, r):
    """Scalar sum(out * r): a generic linear functional of an op's output."""
    return T.sum(T.mul(out, T.Tensor(r)))


def primitive_cases(rng):
    """(name, fn, arrays) triples; fn maps input Tensors to a scalar Tensor."""
    u = lambda *s: rng.uniform(-1, 1, size=s)  # noqa: E731
    cases = []

    def unary(name, op, x):
        r = rng.uniform(-1, 1, size=op(T.Tensor(x)).shape)
        cases.append((name, lambda a: _probe(op(a), r), [x]))

    def binary(name, op, a, b):
        r = rng.uniform(-1, 1, size=op(T.Tensor(a), T.Tensor(b)).shape)
        cases.append((name, lambda x, y: _probe(op(x, y), r), [a, b]))

    binary("add", T.add, u(2, 3, 4, 5), u(1, 3, 1, 1))
    binary("sub", T.sub, u(2, 3, 4, 5), u(2, 3, 4, 5))
    binary("mul", T.mul, u(2, 3, 4, 5), u(1, 3, 1, 1))
    unary("scalar_mul", lambda a: T.scalar_mul(a, -1.7), u(2, 3, 4))
    unary("add_scalar", lambda a: T.add_scalar(a, 0.3), u(2, 3, 4))
    unary("relu", T.relu, _away_from_zero(rng, (2, 3, 4, 5)))
    unary("gelu", T.gelu, u(2, 3, 4, 5))
    unary("sigmoid", T.sigmoid, u(2, 3, 4, 5))
    unary("softplus", T.softplus, u(2, 3, 4, 5))
    unary("abs", T.abs, _away_from_zero(rng, (2, 3, 4, 5)))
    unary("exp", T.exp, u(2, 3, 4))
    unary("clamp_max", lambda a: T.clamp_max(a, 0.5), np.where(np.abs(u(2, 3, 4, 5) - 0.5) < 0.05, 0.0, u(2, 3, 4, 5)))
    unary("sum", T.sum, u(2, 3, 4))
    unary("mean", T.mean, u(2, 3, 4))
    unary("reshape", lambda a: T.reshape(a, (6, 20)), u(2, 3, 4, 5))
    unary("transpose", lambda a: T.transpose(a, (0, 2, 3, 1)), u(2, 3, 4, 5))
    unary("index", lambda a: T.index(a, (slice(None), slice(1, 3), slice(None, None, 2))), u(2, 4, 5, 3))
    binary("concat_channels", T.concat_channels, u(2, 3, 4, 5), u(2, 2, 4, 5))
    unary("split_channels", lambda a: T.mul(*T.split_channels(a, (2, 2))), u(2, 4, 3, 3))
    unary("flatten_spatial", T.flatten_spatial, u(2, 3, 4, 5))
    unary("unflatten_spatial", lambda a: T.unflatten_spatial(a, 4, 5), u(2, 20, 3))
    binary("matmul", T.matmul, u(5, 4), u(4, 3))
    binary("matmul_batched", T.matmul, u(2, 5, 4), u(2, 4, 3))
    unary("softmax_lastdim", T.softmax_lastdim, u(6, 7))
    x, w, b = u(2, 5, 4, 3), 1 + 0.5 * u(5), u(5)
    r = u(2, 5, 4, 3)
    cases.append(("layer_norm", lambda a, g, c, r=r: _probe(T.layer_norm(a, g, c), r), [x, w, b]))
    for name, xs, ws, kw in (
        ("conv2d_3x3_pad1", (2, 3, 6, 5), (4, 3, 3, 3), dict(padding=1)),
        ("conv2d_3x3_stride2", (1, 3, 7, 7), (2, 3, 3, 3), dict(stride=2, padding=1)),
        ("conv2d_groups2", (1, 4, 5, 5), (6, 2, 3, 3), dict(padding=1, groups=2)),
        ("conv2d_depthwise_7x7", (2, 3, 8, 8), (3, 1, 7, 7), dict(padding=3, groups=3)),
        ("conv2d_1x1", (2, 4, 3, 3), (5, 4, 1, 1), {}),
        ("conv2d_4x4_stride4", (1, 3, 8, 8), (4, 3, 4, 4), dict(stride=4)),
        ("conv2d_2x2_stride2", (1, 3, 6, 6), (5, 3, 2, 2), dict(stride=2)),
    ):
        x, wt, bias = u(*xs), u(*ws), u(ws[0])
        r = rng.uniform(-1, 1, size=T.conv2d(T.Tensor(x), T.Tensor(wt), T.Tensor(bias), **kw).shape)
        cases.append((name, lambda a, k, c, kw=kw, r=r: _probe(T.conv2d(a, k, c, **kw), r), [x, wt, bias]))
    unary("bilinear_up2", lambda a: T.bilinear_interp(a, 8, 10), u(2, 3, 4, 5))
    unary("bilinear_down", lambda a: T.bilinear_interp(a, 3, 2), u(1, 2, 7, 5))
    unary("bilinear_uneven", lambda a: T.bilinear_interp(a, 5, 7), u(1, 2, 3, 4))

    w1, w2 = u(4, 3, 3, 3) * 0.5, u(2, 4, 3, 3) * 0.5
    cases.append((
        "small_network",
        lambda a, k1, k2: T.mean(T.conv2d(T.gelu(T.conv2d(a, k1, padding=1)), k2, padding=1)),
        [u(2, 3, 6, 6), w1, w2],
    ))
    return cases


def _fuse_level_case(rng, esem_mode):
    c, h, w = 4, 4, 4
    cfg = FusionConfig(esem_mode=esem_mode)
    init = ParamStore(np.float64)
    init_level(init, c, h, w, cfg, rng)
    names = init.names()
    # break the zero init so every path carries signal
    arrays = [rng.uniform(-1, 1, size=(1, c, h, w)), rng.uniform(-1, 1, size=(1, c, h, w))]
    arrays += [t.data + rng.normal(0, 0.3, size=t.shape) for _, t in init.items()]

    def fn(f_rgb, f_thr, *leaves):
        p = ParamStore.wrap(zip(names, leaves), np.float64)
        return _probe(fuse_level(f_rgb, f_thr, p, cfg), r)

    r = rng.uniform(-1, 1, size=(1, c, h, w))
    return fn, arrays


def tiny_model_config(input_size=(32, 32)):
    from rtfusion.backbone import EncoderConfig
    from rtfusion.decoder import DecoderConfig
    from rtfusion.engine.config import ModelConfig

    enc = dict(stage_widths=(4, 8, 8, 8), stage_depths=(1, 1, 1, 1))
    return ModelConfig(
        rgb_encoder=EncoderConfig(in_channels=3, **enc),
        thr_encoder=EncoderConfig(in_channels=1, **enc),
        decoder=DecoderConfig(stage_widths=(8, 8, 4)),
        input_size=input_size,
    )


def model_gradcheck(rng, per_tensor=2, h=GRAD_H, prefixes=None):
    """Worst relative error of d(total loss)/d(params) at sampled entries of every tensor.

    Runs the full model in float64 on one synthetic 32x32 sample.
    """
    from rtfusion.engine.model import forward, init_params
    from rtfusion.loss import loss_terms

    cfg = tiny_model_config()
    params = init_params(cfg, np.float64)
    # zero-initialized leaves (biases, offsets, embeddings) get small values so no path is degenerate
    for _, t in params.items():
        t.data = t.data + rng.normal(0, 0.05, size=t.shape)
    s = generate(SceneSpec(height=32, width=32, thr_scale=1), int(rng.integers(1 << 30)), "day")
    rgb, thr, depth, mask = (a[None].astype(np.float64) for a in (s.rgb, s.thr, s.depth, s.mask))

    def loss_value():
        return loss_terms(forward(rgb, thr, params, cfg), depth, mask, rgb, cfg.loss)[0]

    params.zero_grad()
    T.backward(loss_value())
    worst, worst_name = 0.0, ""
    with T.no_grad():
        for name, t in params.items():
            if prefixes and not name.startswith(tuple(prefixes)):
                continue
            picks = rng.choice(t.data.size, size=min(per_tensor, t.data.size), replace=False)
            ana = t.grad.reshape(-1)[picks] if t.grad is not None else np.zeros(len(picks))
            num = np.empty(len(picks))
            flat = t.data.reshape(-1)
            for j, i in enumerate(picks):
                orig = flat[i]
                flat[i] = orig + h
                up = loss_value().item()
                flat[i] = orig - h
                down = loss_value().item()
                flat[i] = orig
                num[j] = (up - down) / (2 * h)
            # scale from the full analytic tensor, as in the dense checks
            scale = max(float(np.max(np.abs(t.grad))) if t.grad is not None else 0.0, float(np.max(np.abs(num))), 1e-6)
            err = float(np.max(np.abs(ana - num))) / scale
            if err > worst:
                worst, worst_name = err, name
    return worst, worst_name


def gradcheck_suite(seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for name, fn, arrays in primitive_cases(rng):
        err = max(gradcheck(fn, arrays, h=GRAD_H))
        out.append(Check("gradcheck", name, err < PRIMITIVE_TOL, err, PRIMITIVE_TOL))
    for mode in ("learned", "sobel", "none"):
        fn, arrays = _fuse_level_case(rng, mode)
        err = max(gradcheck(fn, arrays, h=GRAD_H))
        out.append(Check("gradcheck", f"fuse_level/esem-{mode}", err < PRIMITIVE_TOL, err, PRIMITIVE_TOL))
    err, _ = model_gradcheck(rng)
    out.append(Check("gradcheck", "full_model_32x32", err < MODEL_TOL, err, MODEL_TOL))
    return out


# ---------------------------------------------------------------------------
# metric oracle


def naive_metrics(pred, gt, mask):
    """Straight-line pure-python metrics over masked pixels (shares no code with evaluate)."""
    ys, ps = [], []
    for p, g, m in zip(pred, gt, mask):
        if m:
            ys.append(float(g))
            ps.append(float(p))
    n = len(ys)
    abs_rel = sq_rel = sq = sq_log = 0.0
    hits = [0, 0, 0]
    for g, p in zip(ys, ps):
        abs_rel += abs(g - p) / g
        sq_rel += ((g - p) / g) ** 2
        sq += (g - p) ** 2
        sq_log += (math.log(g + 1.0) - math.log(p + 1.0)) ** 2
        r = p / g if p / g > g / p else g / p
        for k in range(3):
            if r < 1.25 ** (k + 1):
                hits[k] += 1
    return {
        "abs_rel": abs_rel / n,
        "sq_rel": sq_rel / n,
        "rmse": math.sqrt(sq / n),
        "rmse_log": math.sqrt(sq_log / n),
        "delta1": hits[0] / n,
        "delta2": hits[1] / n,
        "delta3": hits[2] / n,
        "valid_pixels": n,
    }


def random_metric_case(rng):
    n = int(rng.integers(1, 200))
    gt = rng.uniform(0.5, 80.0, size=n)
    pred = gt * np.exp(rng.normal(0, 0.4, size=n))
    mask = rng.random(n) < rng.uniform(0.2, 1.0)
    mask[int(rng.integers(n))] = True
    # masked-out pixels may hold invalid depth
    gt = np.where(mask, gt, 0.0)
    return pred, gt, mask


def oracle_disagreement(evaluate_fn, cases):
    worst = 0.0
    for pred, gt, mask in cases:
        got = evaluate_fn(pred, gt, mask).to_dict()
        ref = naive_metrics(pred.tolist(), gt.tolist(), mask.tolist())
        if got["valid_pixels"] != ref["valid_pixels"]:
            return math.inf
        for c in metrics.COLUMNS:
            worst = max(worst, abs(got[c] - ref[c]) / max(1.0, abs(ref[c])))
    return worst


HAND_EXAMPLES = (
    # (name, pred, gt, expected subset)
    ("perfect", [3.0, 7.5, 20.0], [3.0, 7.5, 20.0],
     dict(abs_rel=0.0, sq_rel=0.0, rmse=0.0, rmse_log=0.0, delta1=1.0, delta2=1.0, delta3=1.0)),
    ("absrel_rmse", [2.0, 1.0, 3.0], [1.0, 2.0, 4.0], dict(abs_rel=(1 + 0.5 + 0.25) / 3, rmse=1.0)),
    ("deltas", [1.2, 1.3, 2.0], [1.0, 1.0, 1.0], dict(delta1=1 / 3, delta2=2 / 3, delta3=2 / 3)),
)


def metric_suite(seed=0, n_cases=1000):
    evaluate_fn = metrics.evaluate  # looked up at call time so a patched evaluate is what gets checked
    rng = np.random.default_rng(seed)
    cases = [random_metric_case(rng) for _ in range(n_cases)]
    err = oracle_disagreement(evaluate_fn, cases)
    out = [Check("metrics", f"oracle_{n_cases}_arrays", err <= ORACLE_TOL, err, ORACLE_TOL)]
    for name, pred, gt, want in HAND_EXAMPLES:
        got = evaluate_fn(np.array(pred), np.array(gt)).to_dict()
        dev = max(abs(got[k] - v) for k, v in want.items())
        out.append(Check("metrics", f"hand_{name}", dev <= ORACLE_TOL, dev, ORACLE_TOL))
    a = metrics.MetricsReport(0.1, 0.1, 3.0, 0.1, 0.5, 0.6, 0.7, 10, "x")
    b = metrics.MetricsReport(0.1, 0.1, 4.0, 0.1, 0.5, 0.6, 0.7, 10, "x")
    dev = abs(metrics.pool([a, b]).rmse - math.sqrt(12.5))
    out.append(Check("metrics", "pooled_rmse", dev <= ORACLE_TOL, dev, ORACLE_TOL))
    return out


# ---------------------------------------------------------------------------
# file formats


def _rejects(reader, path):
    try:
        reader(path)
    except io.FormatError:
        return True
    return False


def format_suite(seed=0):
    rng = np.random.default_rng(seed)
    out = []
    with tempfile.TemporaryDirectory() as tmp:
        path = lambda name: os.path.join(tmp, name)  # noqa: E731
        d = rng.uniform(0.1, 80.0, size=(1, 17, 23)).astype(np.float32)
        d[0, ::5, ::3] = 0.0
        io.write_pfm(path("d.pfm"), d)
        back = io.read_pfm(path("d.pfm"))
        exact = back.shape == d.shape and np.array_equal(back.view(np.uint32), d.view(np.uint32))
        out.append(Check("formats", "pfm_lossless", exact, 0.0 if exact else 1.0, 0.0))

        rgb = rng.random((3, 13, 9)).astype(np.float32)
        io.write_ppm(path("a.ppm"), rgb)
        back = io.read_ppm(path("a.ppm"))
        err = float(np.max(np.abs(back - rgb)))
        out.append(Check("formats", "ppm_quantization", err <= 0.5 / 255 + 1e-6, err, 0.5 / 255))
        io.write_ppm(path("b.ppm"), back)
        same = open(path("a.ppm"), "rb").read() == open(path("b.ppm"), "rb").read()
        out.append(Check("formats", "ppm_requantize_exact", same, 0.0 if same else 1.0, 0.0))

        thr = rng.random((1, 11, 14)).astype(np.float32)
        io.write_pgm16(path("a.pgm"), thr)
        back = io.read_pgm(path("a.pgm"))
        err = float(np.max(np.abs(back - thr)))
        out.append(Check("formats", "pgm16_quantization", err <= 0.5 / 65535 + 1e-7, err, 0.5 / 65535))
        io.write_pgm16(path("b.pgm"), back)
        same = open(path("a.pgm"), "rb").read() == open(path("b.pgm"), "rb").read()
        out.append(Check("formats", "pgm16_requantize_exact", same, 0.0 if same else 1.0, 0.0))

        bad = {
            "truncated.ppm": open(path("a.ppm"), "rb").read()[:-5],
            "magic.ppm": b"P3\n2 2\n255\n" + bytes(12),
            "header.pgm": b"P5\nxx 2\n65535\n" + bytes(8),
            "truncated.pgm": open(path("a.pgm"), "rb").read()[:-1],
            "truncated.pfm": open(path("d.pfm"), "rb").read()[:-4],
            "magic.pfm": b"PF\n2 2\n-1.0\n" + bytes(48),
        }
        readers = {".ppm": io.read_ppm, ".pgm": io.read_pgm, ".pfm": io.read_pfm}
        for name, payload in bad.items():
            with open(path(name), "wb") as fh:
                fh.write(payload)
            ok = _rejects(readers[os.path.splitext(name)[1]], path(name))
            out.append(Check("formats", f"rejects_{name}", ok, 0.0 if ok else 1.0, 0.0))
    return out


SUITES = {"gradcheck": gradcheck_suite, "metrics": metric_suite, "formats": format_suite}


def run(names=None, seed=0, emit=print):
    """Run suites in order; returns (all passed, checks, {suite: seconds})."""
    checks, timing = [], {}
    for name in names or SUITES:
        t0 = time.perf_counter()
        rows = SUITES[name](seed)
        timing[name] = time.perf_counter() - t0
        for c in rows:
            if emit:
                emit(c.line())
        if emit:
            emit(f"suite {name}: {sum(c.passed for c in rows)}/{len(rows)} passed in {timing[name]:.2f}s")
        checks += rows
    return all(c.passed for c in checks), checks, timing
