import json
import os
import subprocess
import sys

import numpy as np
import pytest

from rtfusion import metrics
from rtfusion.cli import main
from rtfusion.data import read_pfm, read_ppm, write_ppm
from rtfusion.engine.protocol import VARIANTS

TINY = [
    "--set", "model.rgb_encoder.stage_widths=[4,8,8,8]",
    "--set", "model.thr_encoder.stage_widths=[4,8,8,8]",
    "--set", "model.decoder.stage_widths=[8,8,4]",
]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli") / "data"
    assert main(["gen-data", "--out", str(root), "--train", "2", "--val", "1", "--seed", "3"]) == 0
    return root


@pytest.fixture(scope="module")
def trained(data_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "run"
    assert main(["train", "--data", str(data_dir), "--steps", "2", "--out", str(out), "--seed", "1", *TINY,
                 "--set", "train.batch_size=2"]) == 0
    return out


def test_gen_data_count_and_idempotent(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["gen-data", "--out", str(a), "--train", "8", "--val", "4", "--scenarios", "day,night,rain"]) == 0
    dirs = [d for s in ("day", "night", "rain") for d in (a / s).iterdir() if d.is_dir()]
    assert len(dirs) == 36
    assert main(["gen-data", "--out", str(b), "--train", "8", "--val", "4"]) == 0
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file() and p.name != "run.json")
    assert files
    for f in files:
        assert (a / f).read_bytes() == (b / f).read_bytes(), f
    # rerunning into the same directory rewrites identical bytes
    before = {f: (a / f).read_bytes() for f in files}
    assert main(["gen-data", "--out", str(a), "--train", "8", "--val", "4"]) == 0
    assert all((a / f).read_bytes() == v for f, v in before.items())
    manifest = json.loads((a / "run.json").read_text())
    assert {"config", "config_hash", "seed", "out_dir", "command", "timestamp"} <= set(manifest)


def test_gen_data_bad_scenario_is_usage_error(tmp_path, capsys):
    assert main(["gen-data", "--out", str(tmp_path), "--train", "1", "--val", "1", "--scenarios", "day,fog"]) == 1
    assert "fog" in capsys.readouterr().err


def test_usage_errors_exit_1(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--steps", "3"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 1


def test_train_missing_data_dir(tmp_path, capsys):
    code = main(["train", "--data", str(tmp_path / "missing"), "--steps", "1", "--out", str(tmp_path / "o")])
    assert code == 2
    assert "does not exist" in capsys.readouterr().err


def test_train_bad_config_key(data_dir, tmp_path):
    assert main(["train", "--data", str(data_dir), "--steps", "1", "--out", str(tmp_path), "--set", "model.nope=1"]) == 1


def test_train_zero_steps_and_reproducible(data_dir, trained, tmp_path):
    again = tmp_path / "again"
    assert main(["train", "--data", str(data_dir), "--steps", "2", "--out", str(again), "--seed", "1", *TINY,
                 "--set", "train.batch_size=2"]) == 0
    for f in ("losses.csv", "model.bin", "model.json"):
        assert (again / f).read_bytes() == (trained / f).read_bytes()
    assert (trained / "run.json").is_file()
    zero = tmp_path / "zero"
    assert main(["train", "--data", str(data_dir), "--steps", "0", "--out", str(zero), "--seed", "1", *TINY]) == 0
    assert json.loads((zero / "model.json").read_text())["step"] == 0


def test_eval_oracle_is_perfect(data_dir, tmp_path, capsys):
    stub = tmp_path / "oracle"
    assert main(["make-oracle", "--out", str(stub)]) == 0
    report = tmp_path / "report.json"
    assert main(["eval", "--checkpoint", str(stub), "--data", str(data_dir), "--report", str(report)]) == 0
    doc = json.loads(report.read_text())
    import jsonschema

    jsonschema.validate(doc, metrics.REPORT_SCHEMA)
    for r in list(doc["scenarios"].values()) + [doc["overall"]]:
        assert r["abs_rel"] == r["sq_rel"] == r["rmse"] == r["rmse_log"] == 0.0
        assert r["delta1"] == r["delta2"] == r["delta3"] == 1.0
    assert set(doc["scenarios"]) == {"day", "night", "rain"}
    table = (tmp_path / "report.txt").read_text().splitlines()
    assert table[0].split()[1:8] == ["AbsRel", "SqRel", "RMSE", "RMSE(log)", "d1", "d2", "d3"]
    assert (tmp_path / "report.json.run.json").is_file()


def test_eval_trained_checkpoint(data_dir, trained, tmp_path):
    report = tmp_path / "r.json"
    assert main(["eval", "--checkpoint", str(trained), "--data", str(data_dir), "--report", str(report)]) == 0
    doc = json.loads(report.read_text())
    assert doc["overall"]["valid_pixels"] > 0 and doc["overall"]["abs_rel"] > 0


def test_eval_bad_checkpoint_exit_2(data_dir, tmp_path):
    assert main(["eval", "--checkpoint", str(tmp_path), "--data", str(data_dir), "--report", str(tmp_path / "r.json")]) == 2


def test_predict_dims_determinism_and_vis(data_dir, trained, tmp_path):
    sample = data_dir / "day" / "3"
    args = ["predict", "--checkpoint", str(trained), "--rgb", str(sample / "rgb.ppm"), "--thr", str(sample / "thr.pgm")]
    assert main(args + ["--out", str(tmp_path / "a.pfm"), "--png-vis", str(tmp_path / "a.ppm")]) == 0
    assert main(args + ["--out", str(tmp_path / "b.pfm")]) == 0
    d = read_pfm(tmp_path / "a.pfm")
    assert d.shape == (1, 64, 64)
    assert (tmp_path / "a.pfm").read_bytes() == (tmp_path / "b.pfm").read_bytes()
    assert read_ppm(tmp_path / "a.ppm").shape == (3, 64, 64)
    assert (tmp_path / "a.pfm.run.json").is_file()


def test_predict_malformed_ppm_exit_2(data_dir, trained, tmp_path):
    bad = tmp_path / "bad.ppm"
    bad.write_bytes(b"P6\n64 64\n255\n" + bytes(100))
    code = main(["predict", "--checkpoint", str(trained), "--rgb", str(bad),
                 "--thr", str(data_dir / "day" / "3" / "thr.pgm"), "--out", str(tmp_path / "o.pfm")])
    assert code == 2


def test_predict_wrong_size_exit_2(data_dir, trained, tmp_path):
    rgb = tmp_path / "big.ppm"
    write_ppm(rgb, np.zeros((3, 96, 64)))
    code = main(["predict", "--checkpoint", str(trained), "--rgb", str(rgb),
                 "--thr", str(data_dir / "day" / "3" / "thr.pgm"), "--out", str(tmp_path / "o.pfm")])
    assert code == 2


def test_ablate_matrix_and_hash_check(data_dir, tmp_path):
    out = tmp_path / "ablate"
    assert main(["ablate", "--data", str(data_dir), "--steps", "1", "--out", str(out), "--seeds", "0", *TINY,
                 "--set", "train.batch_size=2"]) == 0
    results = json.loads((out / "ablation.json").read_text())["0"]
    assert sorted(results) == sorted(v.name for v in VARIANTS)
    assert len({r["batch_hash"] for r in results.values()}) == 1
    lines = (out / "ablation.txt").read_text().split("\n\n")[0].splitlines()
    assert lines[0] == "overall"
    absrel = [float(ln.split()[1]) for ln in lines[3:]]
    assert absrel == sorted(absrel) and len(absrel) == len(VARIANTS)
    manifest = json.loads((out / "run.json").read_text())
    assert manifest["config"]["variants"] == [v.name for v in VARIANTS]


def test_ablate_unknown_variant(data_dir, tmp_path):
    assert main(["ablate", "--data", str(data_dir), "--steps", "1", "--out", str(tmp_path), "--variants", "fused/senet"]) == 1


def test_selfcheck_clean_passes(capsys):
    assert main(["selfcheck"]) == 0
    out = capsys.readouterr().out
    for suite in ("gradcheck", "metrics", "formats"):
        assert f"suite {suite}:" in out  # per-suite timing line
    assert "FAIL" not in out


def test_selfcheck_catches_injected_metric_bug(monkeypatch):
    real = metrics.evaluate

    def buggy(d_pred, d_gt, mask=None, scenario="all"):
        r = real(d_pred, d_gt, mask, scenario)
        r.sq_rel = r.sq_rel * 1.001  # off-by-a-little
        return r

    monkeypatch.setattr(metrics, "evaluate", buggy)
    assert main(["selfcheck", "--suites", "metrics"]) == 3


def test_console_script_runs(tmp_path):
    env = dict(os.environ, RTFUSION_THREADS="1")
    res = subprocess.run([sys.executable, "-m", "rtfusion.cli", "selfcheck", "--suites", "formats"],
                         capture_output=True, text=True, env=env)
    assert res.returncode == 0, res.stderr
    res = subprocess.run([sys.executable, "-m", "rtfusion.cli", "selfcheck"], capture_output=True, text=True,
                         env=dict(os.environ, RTFUSION_THREADS="x"))
    assert res.returncode == 1
