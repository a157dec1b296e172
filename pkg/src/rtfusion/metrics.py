"""Depth evaluation metrics, per-scenario pooling and report rendering."""

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

COLUMNS = ("abs_rel", "sq_rel", "rmse", "rmse_log", "delta1", "delta2", "delta3")
HEADERS = ("AbsRel", "SqRel", "RMSE", "RMSE(log)", "d1", "d2", "d3")
THRESHOLDS = (1.25, 1.25**2, 1.25**3)

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "definitions": {
        "report": {
            "type": "object",
            "required": list(COLUMNS) + ["valid_pixels", "scenario"],
            "properties": {
                **{c: {"type": "number", "minimum": 0} for c in COLUMNS},
                "delta1": {"type": "number", "minimum": 0, "maximum": 1},
                "delta2": {"type": "number", "minimum": 0, "maximum": 1},
                "delta3": {"type": "number", "minimum": 0, "maximum": 1},
                "valid_pixels": {"type": "integer", "minimum": 1},
                "scenario": {"type": "string"},
            },
        }
    },
    "type": "object",
    "required": ["columns", "scenarios", "overall"],
    "properties": {
        "columns": {"type": "array", "items": {"type": "string"}},
        "scenarios": {"type": "object", "additionalProperties": {"$ref": "#/definitions/report"}},
        "overall": {"$ref": "#/definitions/report"},
    },
}


@dataclass
class MetricsReport:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    delta1: float
    delta2: float
    delta3: float
    valid_pixels: int
    scenario: str = "all"

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in cls.__dataclass_fields__})


def _flat(x):
    if hasattr(x, "data") and not isinstance(x, np.ndarray):
        x = x.data
    return np.asarray(x, dtype=np.float64).reshape(-1)


def evaluate(d_pred, d_gt, mask=None, scenario="all"):
    """All seven metrics over pixels where mask is set.

    SqRel squares the relative error and RMSE(log) works in log(d + 1) space.
    Threshold accuracy uses r = max(pred/gt, gt/pred) < 1.25**k.
    """
    pred, gt = _flat(d_pred), _flat(d_gt)
    if pred.shape != gt.shape:
        raise ValueError(f"evaluate: pred has {pred.size} values, gt has {gt.size}")
    m = np.ones_like(gt, dtype=bool) if mask is None else _flat(mask) > 0
    if m.shape != gt.shape:
        raise ValueError("evaluate: mask size differs from depth size")
    n = int(m.sum())
    if n == 0:
        raise ValueError("evaluate: mask has no valid pixels")
    y, yp = gt[m], pred[m]
    if np.any(y <= 0):
        raise ValueError("evaluate: ground-truth depth must be > 0 inside the mask")
    if np.any(yp <= 0):
        raise ValueError("evaluate: predicted depth must be > 0")
    rel = (y - yp) / y
    ratio = np.maximum(yp / y, y / yp)
    dlog = np.log(y + 1.0) - np.log(yp + 1.0)
    return MetricsReport(
        abs_rel=float(np.mean(np.abs(rel))),
        sq_rel=float(np.mean(rel * rel)),
        rmse=float(math.sqrt(np.mean((y - yp) ** 2))),
        rmse_log=float(math.sqrt(np.mean(dlog * dlog))),
        delta1=float(np.mean(ratio < THRESHOLDS[0])),
        delta2=float(np.mean(ratio < THRESHOLDS[1])),
        delta3=float(np.mean(ratio < THRESHOLDS[2])),
        valid_pixels=n,
        scenario=scenario,
    )


def pool(reports, scenario=None):
    """Pixel-weighted pooling; RMSE-type metrics pool their squares."""
    reports = list(reports)
    if not reports:
        raise ValueError("cannot pool an empty group of reports")
    if len(reports) == 1:
        r = reports[0]
        return r if scenario is None else MetricsReport(**{**r.to_dict(), "scenario": scenario})
    w = np.array([r.valid_pixels for r in reports], dtype=np.float64)
    total = w.sum()

    def wmean(vals):
        return float(np.dot(w, vals) / total)

    def col(name):
        return np.array([getattr(r, name) for r in reports], dtype=np.float64)

    return MetricsReport(
        abs_rel=wmean(col("abs_rel")),
        sq_rel=wmean(col("sq_rel")),
        rmse=math.sqrt(wmean(col("rmse") ** 2)),
        rmse_log=math.sqrt(wmean(col("rmse_log") ** 2)),
        delta1=wmean(col("delta1")),
        delta2=wmean(col("delta2")),
        delta3=wmean(col("delta3")),
        valid_pixels=int(total),
        scenario=scenario if scenario is not None else reports[0].scenario,
    )


def aggregate(reports):
    """Pool reports per scenario tag; returns {scenario: MetricsReport}."""
    groups = {}
    for r in reports:
        groups.setdefault(r.scenario, []).append(r)
    if not groups:
        raise ValueError("aggregate: no reports")
    return {k: pool(v, k) for k, v in sorted(groups.items())}


def build_report(reports):
    """JSON-ready document: per-scenario pools plus the overall pool."""
    per = aggregate(reports)
    return {
        "columns": list(COLUMNS),
        "scenarios": {k: v.to_dict() for k, v in per.items()},
        "overall": pool(reports, "all").to_dict(),
    }


def format_table(rows, label="scenario"):
    """Aligned plain-text table; ``rows`` is a list of (name, MetricsReport or dict)."""
    names = [str(name) for name, _ in rows]
    width = max([len(label)] + [len(n) for n in names])
    head = f"{label:<{width}}  " + "  ".join(f"{h:>9}" for h in HEADERS) + f"  {'pixels':>8}"
    lines = [head, "-" * len(head)]
    for name, r in rows:
        d = r.to_dict() if isinstance(r, MetricsReport) else r
        vals = "  ".join(f"{d[c]:>9.4f}" for c in COLUMNS)
        lines.append(f"{name:<{width}}  {vals}  {d['valid_pixels']:>8d}")
    return "\n".join(lines)


def report_table(doc):
    rows = [(k, v) for k, v in doc["scenarios"].items()] + [("overall", doc["overall"])]
    return format_table(rows)


def dump_report(doc, path):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
