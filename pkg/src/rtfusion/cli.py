"""Command-line entry point: ``rtfusion <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical failure.
Set RTFUSION_THREADS to cap numba and BLAS worker threads.
"""

import argparse
import json
import logging
import os
import sys
import time
from datetime import datetime, timezone

from rtfusion import __version__

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("rtfusion")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# helpers


def _limit_threads():
    n = os.environ.get("RTFUSION_THREADS", "").strip()
    if not n:
        return None
    try:
        n = int(n)
    except ValueError:
        raise UsageError(f"RTFUSION_THREADS must be an integer, got {n!r}") from None
    from threadpoolctl import threadpool_limits

    from rtfusion._accel import set_threads

    set_threads(n)
    return threadpool_limits(limits=n)


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _run_config(args):
    from rtfusion.engine import config as C

    doc = C.to_dict(C.RunConfig())
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                doc = C.merge(doc, json.load(fh))
        except FileNotFoundError:
            raise UsageError(f"config file {args.config} not found") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {args.config}: invalid JSON ({exc})") from None
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        C.set_path(doc, key, _parse_value(value))
    if getattr(args, "seed", None) is not None:
        doc["model"]["seed"] = args.seed
    if getattr(args, "val_every", None) is not None:
        doc["train"]["val_every"] = args.val_every
    try:
        return C.from_dict(doc)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"bad config: {exc}") from None


def write_manifest(directory, config_doc, seed, command, name="run.json"):
    """RunManifest: resolved config, its content hash, seed, output dir, command, timestamp."""
    from rtfusion.engine.config import content_hash

    os.makedirs(directory, exist_ok=True)
    manifest = {
        "config": config_doc,
        "config_hash": content_hash(config_doc),
        "seed": seed,
        "out_dir": os.path.abspath(directory),
        "command": command,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "version": __version__,
    }
    path = os.path.join(directory, name)
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _file_manifest(path, config_doc, seed, command):
    """Manifest beside a single-file output, ``<file>.run.json``."""
    d = os.path.dirname(os.path.abspath(path))
    return write_manifest(d, config_doc, seed, command, name=os.path.basename(path) + ".run.json")


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args):
    from rtfusion.data.dataset import generate_dataset, parse_scenarios
    from rtfusion.data.synth import SceneSpec

    try:
        scenarios = parse_scenarios(args.scenarios)
        spec = SceneSpec(height=args.height, width=args.width)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.train < 0 or args.val < 0:
        raise UsageError("--train and --val must be >= 0")
    index = generate_dataset(args.out, args.train, args.val, scenarios, args.seed, spec)
    doc = {"spec": spec.to_dict(), "train": args.train, "val": args.val, "scenarios": scenarios}
    write_manifest(args.out, doc, args.seed, args.argv)
    print(f"wrote {len(index['samples'])} samples to {args.out}")
    return EXIT_OK


def cmd_train(args):
    from rtfusion.data.dataset import Dataset
    from rtfusion.engine.config import to_dict
    from rtfusion.engine.train import fit

    cfg = _run_config(args)
    if args.steps < 0:
        raise UsageError("--steps must be >= 0")
    ds = Dataset.load(args.data)
    if len(ds.train) < cfg.train.batch_size and args.steps > 0:
        raise UsageError(f"{args.data} has {len(ds.train)} training samples, fewer than batch size {cfg.train.batch_size}")
    t0 = time.perf_counter()

    def progress(step, loss):
        if step % max(1, args.log_every) == 0:
            log.info("step %d loss %.5f", step, loss)

    res = fit(ds, cfg, steps=args.steps, out_dir=args.out, resume_from=args.resume, progress=progress)
    write_manifest(args.out, to_dict(cfg), cfg.model.seed, args.argv)
    last = f"{res.losses[-1][1]:.5f}" if res.losses else "n/a"
    print(f"trained to step {res.step} in {time.perf_counter() - t0:.1f}s; final loss {last}; checkpoint in {args.out}")
    return EXIT_OK


def _samples_for(ds, split):
    if split == "val":
        return ds.val or ds.train
    if split == "train":
        return ds.train
    return ds.train + ds.val


def cmd_eval(args):
    from rtfusion.data.dataset import Dataset
    from rtfusion.engine import checkpoint
    from rtfusion.engine.config import to_dict
    from rtfusion.engine.train import evaluate_samples, load_params, model_predictor
    from rtfusion.metrics import build_report, dump_report, evaluate, report_table

    ds = Dataset.load(args.data)
    samples = _samples_for(ds, args.split)
    if not samples:
        raise checkpoint.CheckpointError(f"{args.data} has no samples in split {args.split!r}")
    if checkpoint.is_oracle(args.checkpoint):
        # ground-truth passthrough: exercises the reporting path with a perfect predictor
        reports = [evaluate(s.depth, s.depth, s.mask, scenario=s.scenario) for s in samples if s.mask.sum()]
        config_doc = {"kind": "oracle-gt"}
        seed = None
    else:
        params, run_cfg = load_params(args.checkpoint)
        predict_fn = model_predictor(params, run_cfg.model)
        reports = evaluate_samples(samples, predict_fn, run_cfg.model.input_size)
        config_doc, seed = to_dict(run_cfg), run_cfg.model.seed
    doc = build_report(reports)
    dump_report(doc, args.report)
    table = report_table(doc)
    with open(os.path.splitext(args.report)[0] + ".txt", "w") as fh:
        fh.write(table + "\n")
    _file_manifest(args.report, config_doc, seed, args.argv)
    print(table)
    return EXIT_OK


def cmd_predict(args):
    from rtfusion.colormap import colorize
    from rtfusion.data import io
    from rtfusion.engine import checkpoint
    from rtfusion.engine.config import to_dict
    from rtfusion.engine.model import predict
    from rtfusion.engine.train import load_params

    rgb = io.read_ppm(args.rgb)
    thr = io.read_pgm(args.thr)
    if checkpoint.is_oracle(args.checkpoint):
        raise checkpoint.CheckpointError(f"{args.checkpoint} is an evaluation oracle stub and cannot predict")
    params, run_cfg = load_params(args.checkpoint)
    mcfg = run_cfg.model
    if rgb.shape[1:] != mcfg.input_size:
        raise io.FormatError(f"{args.rgb}: image is {rgb.shape[1]}x{rgb.shape[2]}, model expects {mcfg.input_size[0]}x{mcfg.input_size[1]}")
    if rgb.shape[1] % thr.shape[1] or rgb.shape[2] % thr.shape[2]:
        raise io.FormatError(f"{args.thr}: THR size {thr.shape[1:]} does not divide RGB size {rgb.shape[1:]}")
    depth = predict(rgb[None], thr[None], params, mcfg)[0]
    io.write_pfm(args.out, depth)
    if args.png_vis:
        io.write_ppm(args.png_vis, colorize(depth, mcfg.decoder.d_min, mcfg.decoder.d_max))
    _file_manifest(args.out, to_dict(run_cfg), mcfg.seed, args.argv)
    print(f"wrote {args.out} ({depth.shape[1]}x{depth.shape[2]}, depth {float(depth.min()):.3f}..{float(depth.max()):.3f} m)")
    return EXIT_OK


def cmd_ablate(args):
    from rtfusion.data.dataset import Dataset
    from rtfusion.engine import protocol
    from rtfusion.engine.config import to_dict

    cfg = _run_config(args)
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
        variants = protocol.resolve(args.variants.split(",") if args.variants else None)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if not seeds:
        raise UsageError("--seeds needs at least one seed")
    Dataset.load(args.data)  # fail fast on a bad data directory

    def progress(seed, name, doc):
        log.info("seed %d %-36s AbsRel %.4f", seed, name, doc["overall"]["abs_rel"])

    results = protocol.run_matrix(
        variants, seeds, args.steps, base=cfg, data_root=args.data, out_dir=args.out,
        workers=args.parallel, progress=progress,
    )
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "ablation.json"), "w") as fh:
        json.dump({str(s): per for s, per in results.items()}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    table = protocol.comparison_tables(results)
    with open(os.path.join(args.out, "ablation.txt"), "w") as fh:
        fh.write(table + "\n")
    doc = {"base": to_dict(cfg), "variants": [v.name for v in variants], "seeds": seeds, "steps": args.steps}
    write_manifest(args.out, doc, seeds, args.argv)
    print(table)
    return EXIT_OK


def cmd_selfcheck(args):
    from rtfusion import selfcheck

    names = args.suites.split(",") if args.suites else None
    bad = [n for n in names or [] if n not in selfcheck.SUITES]
    if bad:
        raise UsageError(f"unknown suite(s) {bad}; choose from {','.join(selfcheck.SUITES)}")
    ok, checks, timing = selfcheck.run(names, seed=args.seed)
    failed = [c for c in checks if not c.passed]
    total = sum(timing.values())
    print(f"selfcheck: {len(checks) - len(failed)}/{len(checks)} checks passed in {total:.2f}s")
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_make_oracle(args):
    from rtfusion.engine import checkpoint

    checkpoint.write_oracle(args.out)
    print(f"wrote ground-truth oracle checkpoint stub to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser():
    p = _Parser(prog="rtfusion", description="RGB + thermal depth estimation toolkit")
    p.add_argument("--version", action="version", version=f"rtfusion {__version__}")
    p.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="render a synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--train", type=int, required=True)
    g.add_argument("--val", type=int, required=True)
    g.add_argument("--scenarios", default="day,night,rain")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--height", type=int, default=64)
    g.add_argument("--width", type=int, default=64)
    g.set_defaults(fn=cmd_gen_data)

    def config_flags(q):
        q.add_argument("--config", help="JSON config; missing keys take defaults")
        q.add_argument("--set", action="append", metavar="KEY=VALUE", help="leaf override, e.g. model.fusion.mode=concat")
        q.add_argument("--seed", type=int, help="overrides model.seed")

    t = sub.add_parser("train", help="train a model")
    config_flags(t)
    t.add_argument("--data", required=True)
    t.add_argument("--steps", type=int, required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--resume", help="checkpoint directory to continue from")
    t.add_argument("--val-every", type=int, help="validation interval in steps (0 = off)")
    t.add_argument("--log-every", type=int, default=50)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--report", required=True)
    e.add_argument("--split", default="val", choices=["val", "train", "all"])
    e.set_defaults(fn=cmd_eval)

    r = sub.add_parser("predict", help="predict depth for one RGB/THR pair")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--rgb", required=True)
    r.add_argument("--thr", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--png-vis", help="optional false-color PPM of the depth")
    r.set_defaults(fn=cmd_predict)

    a = sub.add_parser("ablate", help="train and compare the variant matrix")
    config_flags(a)
    a.add_argument("--data", required=True)
    a.add_argument("--steps", type=int, required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--seeds", default="0")
    a.add_argument("--variants", help="comma-separated subset of variant names")
    a.add_argument("--parallel", type=int, default=1, help="worker processes (results are identical)")
    a.set_defaults(fn=cmd_ablate)

    s = sub.add_parser("selfcheck", help="gradient, metric-oracle and file-format checks")
    s.add_argument("--suites", help="comma-separated subset of gradcheck,metrics,formats")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_selfcheck)

    o = sub.add_parser("make-oracle", help="write a ground-truth passthrough checkpoint stub for eval")
    o.add_argument("--out", required=True)
    o.set_defaults(fn=cmd_make_oracle)
    return p


def main(argv=None):
    from rtfusion.data.io import FormatError
    from rtfusion.engine.checkpoint import CheckpointError
    from rtfusion.engine.optim import NumericalError
    from rtfusion.engine.protocol import BatchMismatch

    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = ["rtfusion"] + argv
    logging.basicConfig(level=args.log_level, format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        limits = _limit_threads()
        try:
            return args.fn(args)
        finally:
            if limits is not None:
                limits.unregister()
    except UsageError as exc:
        print(f"rtfusion {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, CheckpointError, FileNotFoundError, BatchMismatch) as exc:
        print(f"rtfusion {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"rtfusion {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, KeyError, ValueError) as exc:
        print(f"rtfusion {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
