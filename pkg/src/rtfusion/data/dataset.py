"""On-disk dataset layout: ``<root>/<scenario>/<seed>/{rgb.ppm,thr.pgm,depth.pfm}`` + ``index.json``."""

import json
import os

import numpy as np

from rtfusion.data import io
from rtfusion.data.synth import SCENARIOS, SamplePair, SceneSpec, generate

INDEX_FORMAT = "rtfusion-dataset/1"


def split_seeds(base_seed, n_train, n_val):
    """Train seeds then val seeds: consecutive and disjoint by construction."""
    train = list(range(base_seed, base_seed + n_train))
    val = list(range(base_seed + n_train, base_seed + n_train + n_val))
    return train, val


def parse_scenarios(text):
    names = [s.strip() for s in text.split(",") if s.strip()] if isinstance(text, str) else list(text)
    bad = [s for s in names if s not in SCENARIOS]
    if bad or not names:
        raise ValueError(f"unknown scenario(s) {bad or text!r}; choose from {','.join(SCENARIOS)}")
    return names


def write_sample(directory, s):
    os.makedirs(directory, exist_ok=True)
    paths = io.sample_paths(directory)
    io.write_ppm(paths["rgb"], s.rgb)
    io.write_pgm16(paths["thr"], s.thr)
    io.write_pfm(paths["depth"], np.where(s.mask > 0, s.depth, 0.0))


def read_sample(directory, scenario="day", seed=0):
    paths = io.sample_paths(directory)
    rgb = io.read_ppm(paths["rgb"])
    thr = io.read_pgm(paths["thr"])
    depth = io.read_pfm(paths["depth"])
    if depth.shape[1:] != rgb.shape[1:]:
        raise io.FormatError(f"{directory}: depth {depth.shape[1:]} and rgb {rgb.shape[1:]} sizes differ")
    mask = (depth > 0).astype(np.float32)
    return SamplePair(rgb=rgb, thr=thr, depth=depth, mask=mask, scenario=scenario, seed=int(seed))


def generate_dataset(root, n_train, n_val, scenarios=SCENARIOS, seed=0, spec=None):
    """Render and write every (scenario, seed) sample plus ``index.json``; returns the index."""
    spec = spec or SceneSpec()
    scenarios = parse_scenarios(scenarios)
    train, val = split_seeds(seed, n_train, n_val)
    entries = []
    for scenario in scenarios:
        for split, seeds in (("train", train), ("val", val)):
            for s in seeds:
                rel = f"{scenario}/{s}"
                write_sample(os.path.join(root, rel), generate(spec, s, scenario))
                entries.append({"scenario": scenario, "seed": s, "split": split, "path": rel})
    index = {
        "format": INDEX_FORMAT,
        "seed": seed,
        "n_train": n_train,
        "n_val": n_val,
        "scenarios": scenarios,
        "spec": spec.to_dict(),
        "samples": entries,
    }
    with open(os.path.join(root, "index.json"), "w") as fh:
        json.dump(index, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return index


class Dataset:
    """Train / val SamplePair lists, loaded from disk or held in memory."""

    def __init__(self, train, val, root=None):
        self.train = list(train)
        self.val = list(val)
        self.root = root

    @classmethod
    def load(cls, root):
        path = os.path.join(root, "index.json")
        if not os.path.isdir(root):
            raise FileNotFoundError(f"data directory {root} does not exist")
        try:
            with open(path) as fh:
                index = json.load(fh)
        except FileNotFoundError:
            raise FileNotFoundError(f"{path} not found; run gen-data first") from None
        except json.JSONDecodeError as exc:
            raise io.FormatError(f"{path}: invalid JSON ({exc})") from None
        if index.get("format") != INDEX_FORMAT:
            raise io.FormatError(f"{path}: unknown dataset format {index.get('format')!r}")
        train, val = [], []
        for e in index["samples"]:
            s = read_sample(os.path.join(root, e["path"]), e["scenario"], e["seed"])
            (train if e["split"] == "train" else val).append(s)
        return cls(train, val, root)

    @classmethod
    def synthetic(cls, n_train, n_val, scenarios=SCENARIOS, seed=0, spec=None):
        """Same samples as ``generate_dataset`` without the file round trip."""
        spec = spec or SceneSpec()
        train_seeds, val_seeds = split_seeds(seed, n_train, n_val)
        scenarios = parse_scenarios(scenarios)
        train = [generate(spec, s, sc) for sc in scenarios for s in train_seeds]
        val = [generate(spec, s, sc) for sc in scenarios for s in val_seeds]
        return cls(train, val)


def stack(samples):
    """Batch arrays (rgb, thr, depth, mask) from a list of SamplePairs."""
    return (
        np.stack([s.rgb for s in samples]),
        np.stack([s.thr for s in samples]),
        np.stack([s.depth for s in samples]),
        np.stack([s.mask for s in samples]),
    )
