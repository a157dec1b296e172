"""Variant matrix and the multi-seed train/evaluate protocol behind ``ablate``."""

import copy
import logging
import os
import time
from typing import NamedTuple

from rtfusion.data.dataset import Dataset
from rtfusion.data.synth import SCENARIOS
from rtfusion.engine.config import RunConfig, from_dict, to_dict
from rtfusion.engine.train import evaluate_samples, fit, model_predictor
from rtfusion.metrics import COLUMNS, build_report, format_table

log = logging.getLogger(__name__)


class Variant(NamedTuple):
    name: str
    modality: str
    fusion: str
    mca: bool
    esem: str


def _variants():
    out = []
    for mca in (True, False):
        for esem in ("learned", "sobel", "none"):
            name = f"fused/egfusion/mca-{'on' if mca else 'off'}/esem-{esem}"
            out.append(Variant(name, "fused", "egfusion", mca, esem))
    out.append(Variant("fused/concat", "fused", "concat", False, "none"))
    # one stream only: no THR edges exist to gate with, and mca/esem toggles would only
    # relabel the same zero-substitute network, so each keeps the default attention path
    for modality in ("rgb_only", "thr_only"):
        out.append(Variant(f"{modality}/egfusion", modality, "egfusion", True, "none"))
        out.append(Variant(f"{modality}/concat", modality, "concat", False, "none"))
    return tuple(out)


VARIANTS = _variants()
BY_NAME = {v.name: v for v in VARIANTS}

# the four arms of the modality / fusion trend checks
FULL = "fused/egfusion/mca-on/esem-learned"
TREND_VARIANTS = (FULL, "rgb_only/egfusion", "thr_only/egfusion", "fused/concat")

PROTOCOL_STEPS = 2000
PROTOCOL_TRAIN = 120
PROTOCOL_VAL = 20
PROTOCOL_SEEDS = (0, 1, 2)


def variant_config(base, variant):
    cfg = copy.deepcopy(base)
    cfg.model.modality = variant.modality
    cfg.model.fusion.mode = variant.fusion
    cfg.model.fusion.mca_enabled = variant.mca
    cfg.model.fusion.esem_mode = variant.esem
    return cfg


def resolve(names):
    if names is None:
        return list(VARIANTS)
    bad = [n for n in names if n not in BY_NAME]
    if bad:
        raise ValueError(f"unknown variant(s) {bad}; known: {', '.join(BY_NAME)}")
    return [BY_NAME[n] for n in names]


def protocol_dataset(seed, n_train=PROTOCOL_TRAIN, n_val=PROTOCOL_VAL):
    """Per-seed synthetic train/val split, disjoint from the other seeds' scenes."""
    return Dataset.synthetic(n_train, n_val, SCENARIOS, seed=100_000 * (int(seed) + 1))


class BatchMismatch(RuntimeError):
    """Two variants of one seed saw different batch sequences."""


def _dataset(seed, data_root):
    return protocol_dataset(seed) if data_root is None else Dataset.load(data_root)


def run_variant(ds, base, variant, seed, steps, out_dir=None):
    """Train one variant with ``seed`` and evaluate it on ``ds.val``."""
    cfg = variant_config(base, variant)
    cfg.model.seed = int(seed)
    t0 = time.perf_counter()
    run_dir = None if out_dir is None else os.path.join(out_dir, f"seed{seed}", variant.name.replace("/", "_"))
    res = fit(ds, cfg, steps=steps, out_dir=run_dir)
    reports = evaluate_samples(ds.val, model_predictor(res.params, cfg.model), cfg.model.input_size)
    doc = build_report(reports)
    seconds = time.perf_counter() - t0
    log.info("seed %s %s: AbsRel %.4f (%.0fs)", seed, variant.name, doc["overall"]["abs_rel"], seconds)
    return {"report": doc, "batch_hash": res.batch_hash, "seconds": seconds}


def _job(args):
    base_doc, name, seed, steps, data_root, out_dir = args
    return run_variant(_dataset(seed, data_root), from_dict(base_doc), BY_NAME[name], seed, steps, out_dir)


def run_matrix(variants, seeds, steps, base=None, data_root=None, out_dir=None, workers=1, progress=None):
    """Train and evaluate every variant for every seed on shared data and batches.

    Data comes from ``data_root`` when given (shared by all seeds), otherwise
    from the per-seed synthetic protocol split. ``workers`` > 1 runs jobs in
    separate processes; results do not depend on the worker count.
    Returns {seed: {variant name: {"report", "batch_hash", "seconds"}}} and
    raises BatchMismatch if one seed's variants saw different batch sequences.
    """
    base = base or RunConfig()
    results = {}
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        jobs = [(to_dict(base), v.name, s, steps, data_root, out_dir) for s in seeds for v in variants]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(_job, jobs))
        for (_, name, s, *_), r in zip(jobs, outs):
            results.setdefault(s, {})[name] = r
            if progress is not None:
                progress(s, name, r["report"])
    else:
        for seed in seeds:
            ds = _dataset(seed, data_root)
            for v in variants:
                r = run_variant(ds, base, v, seed, steps, out_dir)
                results.setdefault(seed, {})[v.name] = r
                if progress is not None:
                    progress(seed, v.name, r["report"])
    for seed, per in results.items():
        if len({r["batch_hash"] for r in per.values()}) > 1:
            raise BatchMismatch(f"seed {seed}: variants trained on different batch sequences")
    return results


def comparison_rows(results, scenario=None):
    """(label, metrics) rows averaged over seeds, sorted by AbsRel ascending.

    ``scenario`` None uses the overall pool; otherwise that scenario's pool.
    """
    acc = {}
    for per in results.values():
        for name, r in per.items():
            doc = r["report"]
            d = doc["overall"] if scenario is None else doc["scenarios"].get(scenario)
            if d is None:
                continue
            acc.setdefault(name, []).append(d)
    rows = []
    for name, ds in acc.items():
        row = {c: sum(d[c] for d in ds) / len(ds) for c in COLUMNS}
        row["valid_pixels"] = sum(d["valid_pixels"] for d in ds)
        rows.append((name, row))
    rows.sort(key=lambda nr: (nr[1]["abs_rel"], nr[0]))
    return rows


def comparison_tables(results):
    scenarios = sorted({s for per in results.values() for r in per.values() for s in r["report"]["scenarios"]})
    parts = ["overall", format_table(comparison_rows(results), label="variant")]
    for s in scenarios:
        parts += ["", s, format_table(comparison_rows(results, s), label="variant")]
    return "\n".join(parts)
