"""Run configuration: one JSON document, fully defaulted, overridable leaf-wise."""

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass

from rtfusion.backbone import EncoderConfig
from rtfusion.decoder import DecoderConfig
from rtfusion.egfusion import FusionConfig
from rtfusion.loss import LossWeights

MODALITIES = ("fused", "rgb_only", "thr_only")


@dataclass
class ModelConfig:
    rgb_encoder: EncoderConfig = field(default_factory=lambda: EncoderConfig(in_channels=3))
    thr_encoder: EncoderConfig = field(default_factory=lambda: EncoderConfig(in_channels=1))
    fusion: FusionConfig = field(default_factory=FusionConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    modality: str = "fused"
    input_size: tuple = (64, 64)
    seed: int = 0

    def __post_init__(self):
        self.input_size = tuple(int(v) for v in self.input_size)
        if self.modality not in MODALITIES:
            raise ValueError(f"modality must be one of {MODALITIES}, got {self.modality!r}")
        if len(self.input_size) != 2 or any(v < 32 or v % 32 for v in self.input_size):
            raise ValueError(f"input_size {self.input_size} must be two positive multiples of 32")
        if self.rgb_encoder.stage_widths != self.thr_encoder.stage_widths:
            raise ValueError("RGB and THR encoders must use the same stage widths")


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float = 5.0
    batch_size: int = 4
    val_every: int = 0
    augment: bool = True
    dtype: str = "float32"

    def __post_init__(self):
        if self.lr < 0 or self.batch_size < 1:
            raise ValueError("lr must be >= 0 and batch_size >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


def to_dict(cfg):
    """Plain-JSON view of a (nested) config dataclass; tuples become lists."""

    def conv(v):
        if is_dataclass(v):
            return {f.name: conv(getattr(v, f.name)) for f in fields(v)}
        if isinstance(v, (tuple, list)):
            return [conv(x) for x in v]
        return v

    return conv(cfg)


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ValueError(f"config section {path or '<root>'} must be an object")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ValueError(f"unknown config keys at {path or '<root>'}: {sorted(unknown)}")
    kwargs = {}
    defaults = cls()
    for name, f in known.items():
        if name not in data:
            continue
        cur = getattr(defaults, name)
        if is_dataclass(cur):
            sub = _build(type(cur), {**to_dict(cur), **data[name]}, f"{path}{name}.")
            kwargs[name] = sub
        else:
            kwargs[name] = data[name]
    return cls(**kwargs)


def from_dict(data, cls=RunConfig):
    return _build(cls, data, "")


def merge(base, overrides):
    """Leaf-wise merge of nested dicts; ``overrides`` wins."""
    out = dict(base)
    for k, v in overrides.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = v
    return out


def set_path(doc, dotted, value):
    """``set_path(d, "model.fusion.mode", "concat")`` in place."""
    keys = dotted.split(".")
    cur = doc
    for k in keys[:-1]:
        cur = cur.setdefault(k, {})
    cur[keys[-1]] = value
    return doc


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def content_hash(obj):
    """git-style blob hash of the canonical JSON encoding."""
    body = canonical_json(obj).encode()
    return hashlib.sha1(b"blob %d\0" % len(body) + body).hexdigest()


def load(path):
    with open(path) as fh:
        return from_dict(json.load(fh))


def save(cfg, path):
    with open(path, "w") as fh:
        json.dump(to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


__all__ = [
    "ModelConfig", "TrainConfig", "RunConfig", "MODALITIES",
    "to_dict", "from_dict", "merge", "set_path", "canonical_json", "content_hash", "load", "save", "asdict",
]
