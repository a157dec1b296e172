"""Checkpoint file pair: ``model.json`` manifest + ``model.bin`` little-endian blob."""

import json
import os

import numpy as np

from rtfusion.engine.config import content_hash

FORMAT = "rtfusion-checkpoint/1"
_DTYPES = {"float32": "<f4", "float64": "<f8"}


class CheckpointError(ValueError):
    pass


def write_arrays(directory, stem, arrays, meta):
    """Write ``{stem}.json`` + ``{stem}.bin`` for an ordered name -> array mapping."""
    os.makedirs(directory, exist_ok=True)
    dtypes = {np.asarray(a).dtype.name for a in arrays.values()} or {"float32"}
    if len(dtypes) != 1 or next(iter(dtypes)) not in _DTYPES:
        raise CheckpointError(f"checkpoint arrays must share one float dtype, got {sorted(dtypes)}")
    dtype = dtypes.pop()
    entries = [{"name": n, "shape": list(np.shape(a))} for n, a in arrays.items()]
    manifest = {"format": FORMAT, "dtype": dtype, "params": entries, **meta}
    blob = b"".join(np.ascontiguousarray(a, dtype=_DTYPES[dtype]).tobytes() for a in arrays.values())
    with open(os.path.join(directory, f"{stem}.bin"), "wb") as fh:
        fh.write(blob)
    with open(os.path.join(directory, f"{stem}.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def read_arrays(directory, stem):
    jpath = os.path.join(directory, f"{stem}.json")
    bpath = os.path.join(directory, f"{stem}.bin")
    try:
        with open(jpath) as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise CheckpointError(f"missing checkpoint manifest {jpath}") from None
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"malformed checkpoint manifest {jpath}: {exc}") from None
    if manifest.get("format") != FORMAT:
        raise CheckpointError(f"{jpath}: unknown format {manifest.get('format')!r}")
    dtype = _DTYPES.get(manifest.get("dtype"))
    if dtype is None:
        raise CheckpointError(f"{jpath}: unsupported dtype {manifest.get('dtype')!r}")
    try:
        with open(bpath, "rb") as fh:
            blob = fh.read()
    except FileNotFoundError:
        raise CheckpointError(f"missing checkpoint blob {bpath}") from None
    itemsize = np.dtype(dtype).itemsize
    expected = sum(int(np.prod(e["shape"], dtype=np.int64)) for e in manifest["params"]) * itemsize
    if len(blob) != expected:
        raise CheckpointError(f"{bpath}: blob is {len(blob)} bytes, manifest needs {expected}")
    arrays, off = {}, 0
    for e in manifest["params"]:
        count = int(np.prod(e["shape"], dtype=np.int64))
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=off).reshape(e["shape"])
        arrays[e["name"]] = arr.astype(np.dtype(dtype).newbyteorder("="))
        off += count * itemsize
    return manifest, arrays


def save(directory, params, step, config_doc, optimizer=None):
    """Write model.json/model.bin (and optim.json/optim.bin when an optimizer is given)."""
    meta = {"step": int(step), "config_hash": content_hash(config_doc), "config": config_doc}
    manifest = write_arrays(directory, "model", params.state(), meta)
    if optimizer is not None:
        write_arrays(directory, "optim", optimizer.state(), {"step": int(optimizer.step_count)})
    return manifest


def load(directory):
    """(manifest, {name: array}) for the model file pair in ``directory``."""
    return read_arrays(directory, "model")


def load_optimizer(directory):
    return read_arrays(directory, "optim")


def is_oracle(directory):
    """True for the ground-truth passthrough stub used to test evaluation plumbing."""
    try:
        with open(os.path.join(directory, "model.json")) as fh:
            return json.load(fh).get("kind") == "oracle-gt"
    except (OSError, json.JSONDecodeError):
        return False


def write_oracle(directory):
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "model.json"), "w") as fh:
        json.dump({"format": FORMAT, "kind": "oracle-gt"}, fh, indent=2)
        fh.write("\n")
