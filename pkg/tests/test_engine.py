import json
import os

import numpy as np
import pytest

from rtfusion import tensor as T
from rtfusion.data import Dataset
from rtfusion.engine import checkpoint
from rtfusion.engine.config import RunConfig, TrainConfig, content_hash, from_dict, to_dict
from rtfusion.engine.model import forward, init_params, param_count, predict
from rtfusion.engine.optim import Adam, NumericalError
from rtfusion.engine.protocol import VARIANTS, variant_config
from rtfusion.engine.train import batch_indices, fit, load_params, make_batch, make_optimizer, train_step
from rtfusion.loss import total_loss
from rtfusion.selfcheck import tiny_model_config


@pytest.fixture(scope="module")
def small_ds():
    return Dataset.synthetic(4, 1, ("day", "night"), seed=50)


def tiny_run(**train):
    cfg = RunConfig(model=tiny_model_config((64, 64)), train=TrainConfig(**train))
    return cfg


def batch_for(cfg, ds, step=0):
    return make_batch(ds.train, cfg, step)


# forward


def test_forward_shape_contract(rng):
    cfg = RunConfig().model
    p = init_params(cfg)
    out = forward(rng.uniform(size=(2, 3, 64, 64)), rng.uniform(size=(2, 1, 32, 32)), p, cfg)
    assert out.shape == (2, 1, 64, 64)
    assert np.all(out.data >= cfg.decoder.d_min)


def test_forward_rejects_wrong_size(rng):
    cfg = RunConfig().model
    with pytest.raises(ValueError, match="input_size"):
        forward(rng.uniform(size=(1, 3, 96, 64)), rng.uniform(size=(1, 1, 48, 32)), init_params(cfg), cfg)


def test_forward_deterministic(rng):
    cfg = RunConfig().model
    rgb, thr = rng.uniform(size=(1, 3, 64, 64)), rng.uniform(size=(1, 1, 32, 32))
    a = predict(rgb, thr, init_params(cfg), cfg)
    b = predict(rgb, thr, init_params(cfg), cfg)
    assert np.array_equal(a, b)


def test_rgb_only_isolated_from_thr(rng):
    cfg = variant_config(RunConfig(), [v for v in VARIANTS if v.name == "rgb_only/egfusion"][0]).model
    p = init_params(cfg, np.float64)
    for _, t in p.items():
        t.data = t.data + rng.normal(0, 0.05, size=t.shape)
    rgb = rng.uniform(size=(1, 3, 64, 64))
    a = predict(rgb, rng.uniform(size=(1, 1, 32, 32)), p, cfg)
    b = predict(rgb, 100 * rng.normal(size=(1, 1, 32, 32)), p, cfg)
    assert np.array_equal(a, b)
    out = forward(rgb, rng.uniform(size=(1, 1, 32, 32)), p, cfg)
    T.backward(total_loss(out, np.full(out.shape, 5.0), np.ones(out.shape), rgb))
    for n, t in p.items():
        if n.startswith("thr_enc."):
            assert t.grad is None or not np.any(t.grad), n
    assert any(t.grad is not None and np.any(t.grad) for n, t in p.items() if n.startswith("rgb_enc."))


def test_thr_only_isolated_from_rgb(rng):
    cfg = variant_config(RunConfig(), [v for v in VARIANTS if v.name == "thr_only/egfusion"][0]).model
    p = init_params(cfg)
    thr = rng.uniform(size=(1, 1, 32, 32))
    a = predict(rng.uniform(size=(1, 3, 64, 64)), thr, p, cfg)
    b = predict(rng.uniform(size=(1, 3, 64, 64)), thr, p, cfg)
    assert np.array_equal(a, b)


@pytest.mark.parametrize("variant", VARIANTS, ids=[v.name for v in VARIANTS])
def test_param_count_closed_form(variant):
    cfg = variant_config(RunConfig(), variant).model
    assert init_params(cfg).num_params() == param_count(cfg)


def test_config_json_roundtrip_and_hash():
    cfg = RunConfig()
    doc = to_dict(cfg)
    back = from_dict(json.loads(json.dumps(doc)))
    assert to_dict(back) == doc
    assert content_hash(doc) == content_hash(to_dict(back))
    doc2 = json.loads(json.dumps(doc))
    doc2["train"]["lr"] = 2e-3
    assert content_hash(doc2) != content_hash(doc)
    with pytest.raises(ValueError, match="unknown"):
        from_dict({"model": {"widths": 3}})
    with pytest.raises(ValueError):
        from_dict({"model": {"input_size": [48, 64]}})


# optimizer / train_step


def test_lr_zero_leaves_params_unchanged(small_ds):
    cfg = tiny_run(lr=0.0)
    p = init_params(cfg.model)
    before = {n: t.data.copy() for n, t in p.items()}
    train_step(batch_for(cfg, small_ds), p, make_optimizer(p, cfg.train), cfg)
    for n, t in p.items():
        assert np.array_equal(t.data, before[n]), n


def test_zero_grads_leave_params_unchanged():
    cfg = RunConfig().model
    p = init_params(cfg)
    before = {n: t.data.copy() for n, t in p.items()}
    opt = Adam(p, lr=1e-2)
    for _ in range(3):
        for _, t in p.items():
            t.grad = np.zeros_like(t.data)
        opt.step()
    for n, t in p.items():
        assert np.array_equal(t.data, before[n]), n


def test_adam_matches_reference_update(rng):
    from rtfusion.params import ParamStore

    p = ParamStore(np.float64)
    p.add("a", rng.normal(size=(3, 4)))
    p.add("b", rng.normal(size=5))
    ref = {n: t.data.copy() for n, t in p.items()}
    m = {n: np.zeros_like(a) for n, a in ref.items()}
    v = {n: np.zeros_like(a) for n, a in ref.items()}
    opt = Adam(p, lr=0.01, grad_clip=0)
    for t in range(1, 4):
        grads = {n: rng.normal(size=a.shape) for n, a in ref.items()}
        for n in ref:
            p[n].grad = grads[n]
            m[n] = 0.9 * m[n] + 0.1 * grads[n]
            v[n] = 0.999 * v[n] + 0.001 * grads[n] ** 2
            mh, vh = m[n] / (1 - 0.9**t), v[n] / (1 - 0.999**t)
            ref[n] = ref[n] - 0.01 * mh / (np.sqrt(vh) + 1e-8)
        opt.step()
    for n in ref:
        np.testing.assert_allclose(p[n].data, ref[n], rtol=1e-12, atol=1e-14)


def test_grad_clip_bounds_norm(rng):
    from rtfusion.params import ParamStore

    p = ParamStore(np.float64)
    p.add("a", np.zeros(4))
    p["a"].grad = np.array([30.0, 40.0, 0.0, 0.0])
    opt = Adam(p, lr=1.0, grad_clip=5.0)
    opt.step()
    assert opt.grad_norm() == pytest.approx(50.0)
    # first Adam step moves every coordinate with nonzero grad by ~lr regardless of scale
    np.testing.assert_allclose(p["a"].data[:2], -1.0, atol=1e-6)


def test_one_step_descent_small_lr():
    ds = Dataset.synthetic(8, 0, ("day", "night"), seed=7)
    wins = 0
    for seed in range(20):
        cfg = RunConfig(train=TrainConfig(lr=1e-4))
        cfg.model.seed = seed
        p = init_params(cfg.model)
        batch = make_batch(ds.train, cfg, 0)
        before, _, _ = train_step(batch, p, make_optimizer(p, cfg.train), cfg)
        rgb, thr, depth, mask = batch
        with T.no_grad():
            after = total_loss(forward(rgb, thr, p, cfg.model), depth, mask, rgb).item()
        wins += after < before
    assert wins >= 18


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_loss_names_tensor(small_ds):
    cfg = tiny_run()
    p = init_params(cfg.model)
    p["dec.head.bias"].data[...] = np.nan
    with pytest.raises(NumericalError, match="depth_prediction"):
        train_step(batch_for(cfg, small_ds), p, make_optimizer(p, cfg.train), cfg)


def test_batch_indices_drop_last_and_determinism():
    seen = np.concatenate([batch_indices(10, 4, 3, s) for s in range(2)])
    assert len(set(seen.tolist())) == 8
    assert np.array_equal(batch_indices(10, 4, 3, 5), batch_indices(10, 4, 3, 5))
    assert not np.array_equal(batch_indices(10, 4, 3, 0), batch_indices(10, 4, 4, 0))
    with pytest.raises(ValueError):
        batch_indices(3, 4, 0, 0)


# fit / checkpoint


def test_zero_steps_checkpoint_is_init(small_ds, tmp_path):
    cfg = tiny_run()
    fit(small_ds, cfg, steps=0, out_dir=str(tmp_path))
    _, arrays = checkpoint.load(str(tmp_path))
    init = init_params(cfg.model)
    for n, t in init.items():
        assert np.array_equal(arrays[n], t.data)
    with open(tmp_path / "losses.csv") as fh:
        assert fh.read().strip() == "step,total,l1,smooth"


def test_checkpoint_layout_and_roundtrip(small_ds, tmp_path, rng):
    cfg = tiny_run()
    res = fit(small_ds, cfg, steps=2, out_dir=str(tmp_path))
    manifest = json.loads((tmp_path / "model.json").read_text())
    sizes = sum(int(np.prod(e["shape"])) for e in manifest["params"])
    assert (tmp_path / "model.bin").stat().st_size == 4 * sizes
    assert [e["name"] for e in manifest["params"]] == res.params.names()
    assert manifest["step"] == 2 and manifest["config_hash"] == content_hash(to_dict(cfg))
    loaded, run_cfg = load_params(str(tmp_path))
    rgb, thr = rng.uniform(size=(1, 3, 64, 64)), rng.uniform(size=(1, 1, 32, 32))
    assert np.array_equal(predict(rgb, thr, loaded, run_cfg.model), predict(rgb, thr, res.params, cfg.model))


def test_truncated_blob_rejected(small_ds, tmp_path):
    fit(small_ds, tiny_run(), steps=0, out_dir=str(tmp_path))
    blob = (tmp_path / "model.bin").read_bytes()
    (tmp_path / "model.bin").write_bytes(blob[:-4])
    with pytest.raises(checkpoint.CheckpointError, match="bytes"):
        checkpoint.load(str(tmp_path))


def test_losses_rows_and_reproducible(small_ds, tmp_path):
    cfg = tiny_run(val_every=2)
    a = fit(small_ds, cfg, steps=4, out_dir=str(tmp_path / "a"))
    fit(small_ds, cfg, steps=4, out_dir=str(tmp_path / "b"))
    rows = (tmp_path / "a" / "losses.csv").read_text().splitlines()
    assert len(rows) == 1 + 4 and [r.split(",")[0] for r in rows[1:]] == ["1", "2", "3", "4"]
    for f in ("losses.csv", "model.bin", "model.json", "optim.bin", "val_metrics.jsonl"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f
    assert [v["step"] for v in a.val_history] == [2, 4]


def test_resume_matches_unbroken_run(small_ds, tmp_path):
    cfg = tiny_run(val_every=2)
    full = fit(small_ds, cfg, steps=6, out_dir=str(tmp_path / "full"))
    fit(small_ds, cfg, steps=3, out_dir=str(tmp_path / "half"))
    resumed = fit(small_ds, cfg, steps=3, out_dir=str(tmp_path / "resumed"), resume_from=str(tmp_path / "half"))
    assert resumed.losses == full.losses
    assert resumed.batch_hash == full.batch_hash
    for f in ("losses.csv", "model.bin", "model.json", "optim.bin", "val_metrics.jsonl"):
        assert (tmp_path / "full" / f).read_bytes() == (tmp_path / "resumed" / f).read_bytes(), f


def test_resume_rejects_other_config(small_ds, tmp_path):
    fit(small_ds, tiny_run(), steps=1, out_dir=str(tmp_path))
    with pytest.raises(ValueError, match="different config"):
        fit(small_ds, tiny_run(lr=5e-4), steps=1, resume_from=str(tmp_path))


def test_missing_checkpoint_files(tmp_path):
    with pytest.raises(checkpoint.CheckpointError, match="manifest"):
        checkpoint.load(str(tmp_path))
    assert not checkpoint.is_oracle(str(tmp_path))
    checkpoint.write_oracle(str(tmp_path))
    assert checkpoint.is_oracle(str(tmp_path))
