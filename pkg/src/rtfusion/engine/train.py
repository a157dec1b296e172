"""Training step, fit loop with checkpoint/resume, and dataset evaluation."""

import csv
import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from rtfusion import tensor as T
from rtfusion.data.augment import augment, center_crop
from rtfusion.data.dataset import stack
from rtfusion.engine import checkpoint
from rtfusion.engine.config import RunConfig, content_hash, to_dict
from rtfusion.engine.model import forward, init_params
from rtfusion.engine.optim import Adam, NumericalError
from rtfusion.loss import loss_terms
from rtfusion.metrics import build_report, evaluate

log = logging.getLogger(__name__)

LOSS_HEADER = ("step", "total", "l1", "smooth")


def _first_nonfinite(named):
    for name, arr in named:
        if arr is not None and not np.all(np.isfinite(arr)):
            return name
    return None


def make_optimizer(params, tcfg):
    return Adam(params, lr=tcfg.lr, beta1=tcfg.beta1, beta2=tcfg.beta2, eps=tcfg.eps, grad_clip=tcfg.grad_clip)


def train_step(batch, params, opt, cfg):
    """forward -> loss -> backward -> Adam update. Returns (total, l1, smooth) as floats.

    ``batch`` is (rgb, thr, depth, mask) arrays; ``cfg`` is a RunConfig.
    """
    rgb, thr, depth, mask = batch
    dt = params.dtype
    params.zero_grad()
    pred = forward(rgb.astype(dt), thr.astype(dt), params, cfg.model)
    total, l1, smooth = loss_terms(pred, depth, mask, rgb, cfg.model.loss)
    if not math.isfinite(total.item()):
        bad = _first_nonfinite([("depth_prediction", pred.data)] + [(n, t.data) for n, t in params.items()])
        raise NumericalError(f"non-finite loss {total.item()}; first non-finite tensor: {bad or 'loss'}")
    T.backward(total)
    bad = _first_nonfinite((f"grad[{n}]", t.grad) for n, t in params.items())
    if bad:
        raise NumericalError(f"non-finite gradient; first non-finite tensor: {bad}")
    opt.step()
    return total.item(), l1.item(), smooth.item()


def batch_indices(n_samples, batch_size, seed, step):
    """Indices of the samples in (0-based) ``step``: seeded per-epoch shuffle, drop-last."""
    per_epoch = n_samples // batch_size
    if per_epoch == 0:
        raise ValueError(f"{n_samples} training samples cannot fill one batch of {batch_size}")
    epoch, j = divmod(step, per_epoch)
    perm = np.random.default_rng(np.random.SeedSequence([int(seed), 1, epoch])).permutation(n_samples)
    return perm[j * batch_size : (j + 1) * batch_size]


def augment_seed(seed, step, slot):
    return int(np.random.SeedSequence([int(seed), 2, step, slot]).generate_state(1)[0])


def make_batch(samples, cfg, step):
    tcfg, mcfg = cfg.train, cfg.model
    idx = batch_indices(len(samples), tcfg.batch_size, mcfg.seed, step)
    chosen = []
    for slot, i in enumerate(idx):
        s = samples[i]
        if tcfg.augment:
            s = augment(s, augment_seed(mcfg.seed, step, slot), crop=mcfg.input_size)
        elif s.rgb.shape[1:] != mcfg.input_size:
            s = center_crop(s, mcfg.input_size)
        chosen.append(s)
    return stack(chosen)


def predict_samples(samples, predict_fn, input_size, batch_size=8):
    """Run ``predict_fn(rgb, thr)`` over center-cropped samples; yields (sample, depth)."""
    for start in range(0, len(samples), batch_size):
        chunk = [center_crop(s, input_size) if s.rgb.shape[1:] != tuple(input_size) else s
                 for s in samples[start : start + batch_size]]
        rgb, thr, _, _ = stack(chunk)
        pred = predict_fn(rgb, thr)
        for s, d in zip(chunk, pred):
            yield s, d


def evaluate_samples(samples, predict_fn, input_size, batch_size=8):
    """Per-sample MetricsReports tagged with the sample's scenario."""
    reports = []
    for s, d in predict_samples(samples, predict_fn, input_size, batch_size):
        if s.mask.sum() == 0:
            continue
        reports.append(evaluate(d, s.depth, s.mask, scenario=s.scenario))
    return reports


def model_predictor(params, mcfg):
    def fn(rgb, thr):
        with T.no_grad():
            return forward(rgb.astype(params.dtype), thr.astype(params.dtype), params, mcfg).data

    return fn


@dataclass
class FitResult:
    params: object
    optimizer: object
    losses: list = field(default_factory=list)
    val_history: list = field(default_factory=list)
    batch_hash: str = ""
    step: int = 0


def _config_doc(cfg):
    return to_dict(cfg)


def _read_losses(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return [tuple([int(r[0])] + [float(v) for v in r[1:]]) for r in rows[1:]]


def _write_losses(path, losses):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOSS_HEADER)
        for step, total, l1, smooth in losses:
            w.writerow([step, repr(total), repr(l1), repr(smooth)])


def fit(dataset, cfg=None, steps=0, out_dir=None, resume_from=None, progress=None):
    """Train for ``steps`` more steps; optionally resume from a checkpoint directory.

    Writes model/optim checkpoints, ``losses.csv`` (one row per global step)
    and, when ``cfg.train.val_every`` > 0, ``val_metrics.jsonl`` into ``out_dir``.
    """
    cfg = cfg or RunConfig()
    doc = _config_doc(cfg)
    dtype = np.dtype(cfg.train.dtype)
    params = init_params(cfg.model, dtype)
    opt = make_optimizer(params, cfg.train)
    losses, val_history = [], []
    hasher_state = ""
    start = 0
    if resume_from is not None:
        manifest, arrays = checkpoint.load(resume_from)
        if manifest.get("config_hash") != content_hash(doc):
            raise ValueError(f"checkpoint {resume_from} was trained with a different config")
        params.load_state(arrays)
        omanifest, ostate = checkpoint.load_optimizer(resume_from)
        opt.load_state(ostate, omanifest["step"])
        start = int(manifest["step"])
        hasher_state = manifest.get("batch_hash", "")
        lpath = os.path.join(resume_from, "losses.csv")
        if os.path.exists(lpath):
            losses = _read_losses(lpath)[:start]
        vpath = os.path.join(resume_from, "val_metrics.jsonl")
        if os.path.exists(vpath):
            with open(vpath) as fh:
                val_history = [json.loads(line) for line in fh if line.strip()]
            val_history = [v for v in val_history if v["step"] <= start]

    samples = dataset.train
    every = cfg.train.val_every
    for step in range(start, start + steps):
        batch = make_batch(samples, cfg, step)
        h = hashlib.sha256(hasher_state.encode())
        for arr in batch:
            h.update(np.ascontiguousarray(arr).tobytes())
        hasher_state = h.hexdigest()
        total, l1, smooth = train_step(batch, params, opt, cfg)
        losses.append((step + 1, total, l1, smooth))
        if progress is not None:
            progress(step + 1, total)
        if every and (step + 1) % every == 0 and dataset.val:
            reports = evaluate_samples(dataset.val, model_predictor(params, cfg.model), cfg.model.input_size)
            val_history.append({"step": step + 1, "report": build_report(reports)})
            log.info("step %d val AbsRel %.4f", step + 1, val_history[-1]["report"]["overall"]["abs_rel"])

    result = FitResult(params, opt, losses, val_history, hasher_state, start + steps)
    if out_dir is not None:
        save_run(out_dir, result, doc)
    return result


def save_run(out_dir, result, doc):
    os.makedirs(out_dir, exist_ok=True)
    manifest = checkpoint.save(out_dir, result.params, result.step, doc, result.optimizer)
    # record the batch hash chain alongside the model manifest for resume and ablation checks
    manifest["batch_hash"] = result.batch_hash
    with open(os.path.join(out_dir, "model.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_losses(os.path.join(out_dir, "losses.csv"), result.losses)
    if result.val_history:
        with open(os.path.join(out_dir, "val_metrics.jsonl"), "w") as fh:
            for v in result.val_history:
                fh.write(json.dumps(v, sort_keys=True) + "\n")


def load_params(directory, mcfg=None, dtype=np.float32):
    """Rebuild a ParamStore (and its ModelConfig) from a checkpoint directory."""
    from rtfusion.engine.config import from_dict

    manifest, arrays = checkpoint.load(directory)
    run_cfg = from_dict(manifest["config"])
    mcfg = mcfg or run_cfg.model
    params = init_params(mcfg, dtype)
    params.load_state(arrays)
    return params, run_cfg
