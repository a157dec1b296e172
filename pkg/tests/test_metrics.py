import json
import math

import jsonschema
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rtfusion import metrics
from rtfusion.metrics import COLUMNS, REPORT_SCHEMA, MetricsReport, aggregate, build_report, evaluate, pool, report_table
from rtfusion.selfcheck import HAND_EXAMPLES, naive_metrics, oracle_disagreement, random_metric_case


@pytest.mark.parametrize("name,pred,gt,want", HAND_EXAMPLES, ids=[h[0] for h in HAND_EXAMPLES])
def test_hand_examples(name, pred, gt, want):
    got = evaluate(np.array(pred), np.array(gt)).to_dict()
    for k, v in want.items():
        assert got[k] == pytest.approx(v, abs=1e-12), k


def test_hand_absrel_value():
    assert evaluate(np.array([2.0, 1.0, 3.0]), np.array([1.0, 2.0, 4.0])).abs_rel == pytest.approx(0.58333, abs=1e-5)


def test_sqrel_is_squared_relative_error():
    r = evaluate(np.array([2.0]), np.array([4.0]))
    assert r.sq_rel == 0.25  # ((4 - 2) / 4)^2, not (4 - 2)^2 / 4


def test_rmse_log_uses_log1p():
    r = evaluate(np.array([1.0]), np.array([3.0]))
    assert r.rmse_log == pytest.approx(math.log(4.0) - math.log(2.0), abs=1e-15)


def test_delta_symmetric_ratio():
    over = evaluate(np.array([1.2]), np.array([1.0]))
    under = evaluate(np.array([1.0]), np.array([1.2]))
    assert over.delta1 == under.delta1 == 1.0


def test_oracle_agreement_1000_cases():
    rng = np.random.default_rng(99)
    assert oracle_disagreement(evaluate, [random_metric_case(rng) for _ in range(1000)]) <= 1e-12


def test_mask_excludes_pixels():
    r = evaluate(np.array([1.0, 5.0]), np.array([1.0, 0.0]), np.array([1, 0]))
    assert r.valid_pixels == 1 and r.abs_rel == 0.0


@pytest.mark.parametrize(
    "pred,gt,mask,match",
    [
        ([1.0, 2.0], [1.0, 2.0], [0, 0], "no valid"),
        ([1.0, 2.0], [1.0, -2.0], [1, 1], "ground-truth"),
        ([1.0, 0.0], [1.0, 2.0], [1, 1], "predicted"),
        ([1.0, 2.0], [1.0], None, "values"),
    ],
)
def test_invalid_inputs_rejected(pred, gt, mask, match):
    with pytest.raises(ValueError, match=match):
        evaluate(np.array(pred), np.array(gt), None if mask is None else np.array(mask))


@settings(max_examples=60)
@given(st.integers(0, 100_000), st.floats(0.01, 100.0))
def test_scale_property_and_monotone_deltas(seed, c):
    pred, gt, mask = random_metric_case(np.random.default_rng(seed))
    a = evaluate(pred, gt, mask)
    b = evaluate(pred * c, gt * c, mask)
    assert a.delta1 <= a.delta2 <= a.delta3 <= 1.0
    for k in ("abs_rel", "sq_rel"):
        assert getattr(b, k) == pytest.approx(getattr(a, k), rel=1e-9, abs=1e-12)
    for k in ("delta1", "delta2", "delta3"):
        # ratios can sit within rounding of a threshold; allow a single flip
        assert abs(getattr(b, k) - getattr(a, k)) <= 1.0 / a.valid_pixels + 1e-12
    assert b.rmse == pytest.approx(c * a.rmse, rel=1e-9)


def test_pool_single_unchanged():
    r = evaluate(np.array([1.0, 2.0]), np.array([1.5, 2.0]), scenario="day")
    assert pool([r]) == r


def test_pool_rmse_squares():
    a = MetricsReport(0.1, 0.1, 3.0, 0.1, 0.5, 0.6, 0.7, 10, "x")
    b = MetricsReport(0.1, 0.1, 4.0, 0.1, 0.5, 0.6, 0.7, 10, "x")
    assert pool([a, b]).rmse == pytest.approx(3.5355, abs=1e-4)


@settings(max_examples=30)
@given(st.integers(0, 100_000))
def test_pool_equals_evaluate_on_concatenation(seed):
    rng = np.random.default_rng(seed)
    cases = [random_metric_case(rng) for _ in range(3)]
    pooled = pool([evaluate(*c) for c in cases])
    whole = evaluate(*(np.concatenate(parts) for parts in zip(*cases)))
    for k in COLUMNS:
        assert getattr(pooled, k) == pytest.approx(getattr(whole, k), rel=1e-10, abs=1e-12)
    assert pooled.valid_pixels == whole.valid_pixels
    ref = naive_metrics(*(np.concatenate(parts).tolist() for parts in zip(*cases)))
    assert pooled.delta2 == pytest.approx(ref["delta2"], abs=1e-12)


def test_pool_empty_rejected():
    with pytest.raises(ValueError):
        pool([])


def test_aggregate_groups_by_scenario(rng):
    reps = []
    for s in ("night", "day", "night"):
        gt = rng.uniform(1, 10, size=20)
        reps.append(evaluate(gt * 1.1, gt, scenario=s))
    groups = aggregate(reps)
    assert list(groups) == ["day", "night"]
    assert groups["night"].valid_pixels == 40
    assert groups["night"].scenario == "night"


def test_report_schema_and_table(rng):
    reps = [evaluate(rng.uniform(1, 5, 30), rng.uniform(1, 5, 30), scenario=s) for s in ("day", "night", "rain")]
    doc = build_report(reps)
    jsonschema.validate(json.loads(json.dumps(doc)), REPORT_SCHEMA)
    table = report_table(doc)
    head = table.splitlines()[0].split()
    assert head == ["scenario", "AbsRel", "SqRel", "RMSE", "RMSE(log)", "d1", "d2", "d3", "pixels"]
    assert [ln.split()[0] for ln in table.splitlines()[2:]] == ["day", "night", "rain", "overall"]


def test_dump_report_roundtrip(tmp_path, rng):
    doc = build_report([evaluate(rng.uniform(1, 5, 30), rng.uniform(1, 5, 30))])
    path = tmp_path / "r.json"
    metrics.dump_report(doc, path)
    back = json.loads(path.read_text())
    assert MetricsReport.from_dict(back["overall"]) == MetricsReport.from_dict(doc["overall"])
