"""Tests for the training and evaluation drivers."""

import csv

import numpy as np
import pytest

from relightkit.datasynth import SynthConfig, synth_pair, synthetic_envmaps
from relightkit.lightstage import SceneProxy, make_stage, render_olat_synthetic
from relightkit.prnet import PRNetConfig, load_checkpoint
from relightkit.training import (
    LOG_COLUMNS,
    MetricsReport,
    TrainConfig,
    evaluate,
    fit,
    worker_count,
)

TINY = PRNetConfig(
    resolution=16,
    light_shape=(4, 8),
    enc_channels=(4, 8),
    light_embed=8,
    gn_groups=4,
)


@pytest.fixture(scope="module")
def pairs():
    stage = make_stage(24)
    olat = render_olat_synthetic(SceneProxy(), stage, 32)
    envs = synthetic_envmaps(4, height=16, width=32, seed=2)
    ids = sorted(envs)
    cfg = SynthConfig(resolution=16, light_shape=(4, 8), env_shape=(16, 32))
    out = []
    for i in range(4):
        rng = np.random.default_rng([55, i])
        out.append(synth_pair(olat, envs[ids[i]], envs[ids[(i + 1) % 4]], rng, cfg))
    return out


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(steps=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        TrainConfig(lambda_light=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)


def test_worker_count_env(monkeypatch):
    monkeypatch.delenv("RELIGHT_THREADS", raising=False)
    assert worker_count() == 1
    monkeypatch.setenv("RELIGHT_THREADS", "3")
    assert worker_count() == 3
    assert worker_count(2) == 2  # capped by the item count
    monkeypatch.setenv("RELIGHT_THREADS", "0")
    assert worker_count() >= 1
    monkeypatch.setenv("RELIGHT_THREADS", "x")
    with pytest.raises(ValueError):
        worker_count()
    monkeypatch.setenv("RELIGHT_THREADS", "-2")
    with pytest.raises(ValueError):
        worker_count()


def test_fit_reduces_loss_and_logs(tmp_path, pairs):
    tcfg = TrainConfig(steps=40, learning_rate=1e-3, batch_size=4, seed=0)
    params, history = fit(pairs, TINY, tcfg, out_dir=tmp_path)
    assert len(history) == 40
    assert history[-1].loss_total < history[0].loss_total

    with open(tmp_path / "training_log.csv") as f:
        rows = list(csv.reader(f))
    assert rows[0] == LOG_COLUMNS
    assert len(rows) == 41
    assert float(rows[1][2]) == history[0].loss_total

    ckpt_params, ckpt_config, meta, opt = load_checkpoint(tmp_path / "ckpt_final")
    assert meta["step"] == 40
    assert opt is not None
    np.testing.assert_array_equal(
        ckpt_params.tensors()[0].data, params.tensors()[0].data
    )


def test_fit_is_deterministic(pairs):
    tcfg = TrainConfig(steps=10, batch_size=2, seed=4)
    params_a, hist_a = fit(pairs, TINY, tcfg)
    params_b, hist_b = fit(pairs, TINY, tcfg)
    assert [h.loss_total for h in hist_a] == [h.loss_total for h in hist_b]
    for ta, tb in zip(params_a.tensors(), params_b.tensors()):
        np.testing.assert_array_equal(ta.data, tb.data)


def test_resume_matches_uninterrupted_run(tmp_path, pairs):
    tcfg_full = TrainConfig(steps=12, batch_size=2, seed=1, checkpoint_every=6)
    params_full, _ = fit(pairs, TINY, tcfg_full, out_dir=tmp_path / "full")

    fit(pairs, TINY, TrainConfig(steps=6, batch_size=2, seed=1), out_dir=tmp_path / "half")
    params_res, hist = fit(
        pairs,
        TINY,
        TrainConfig(steps=12, batch_size=2, seed=1),
        resume_from=tmp_path / "half" / "ckpt_final",
    )
    assert len(hist) == 6  # only the remaining steps actually run
    for ta, tb in zip(params_full.tensors(), params_res.tensors()):
        np.testing.assert_array_equal(ta.data, tb.data)


def test_resume_rejects_architecture_mismatch(tmp_path, pairs):
    fit(pairs, TINY, TrainConfig(steps=2, batch_size=2), out_dir=tmp_path)
    other = PRNetConfig(
        resolution=16, light_shape=(4, 8), enc_channels=(8, 8), light_embed=8, gn_groups=4
    )
    with pytest.raises(ValueError, match="architecture"):
        fit(pairs, other, TrainConfig(steps=4), resume_from=tmp_path / "ckpt_final")


def test_fit_rejects_mismatched_pairs(pairs):
    wrong = PRNetConfig(
        resolution=32, light_shape=(4, 8), enc_channels=(4, 8), light_embed=8, gn_groups=4
    )
    with pytest.raises(ValueError, match="resolution"):
        fit(pairs, wrong, TrainConfig(steps=1))
    with pytest.raises(ValueError, match="no pairs"):
        fit([], TINY, TrainConfig(steps=1))


def test_lambda_zero_skips_branches(pairs):
    tcfg = TrainConfig(steps=3, batch_size=2, lambda_light=0.0, lambda_self=0.0)
    _, hist = fit(pairs, TINY, tcfg)
    assert all(h.loss_light == 0.0 and h.loss_self == 0.0 for h in hist)
    np.testing.assert_allclose(
        [h.loss_total for h in hist], [h.loss_target for h in hist], rtol=1e-6
    )


def test_evaluate_identity_model_scores_zero(pairs):
    report = evaluate(pairs, predict_fn=lambda p: (p.image_tgt, p.image_src, p.light_src))
    for e in report.examples:
        assert e.target["rmse"] == 0.0
        assert e.source["rmse"] == 0.0
        assert e.target["dssim"] == 0.0
        assert e.light_rmse_s < 1e-9
    assert report.mean["target_rmse"] == 0.0


def test_evaluate_with_network_produces_report(pairs):
    tcfg = TrainConfig(steps=2, batch_size=2)
    params, _ = fit(pairs, TINY, tcfg)
    report = evaluate(pairs, params, TINY)
    assert len(report.examples) == len(pairs)
    for e in report.examples:
        assert e.target["rmse_s"] <= e.target["rmse"] + 1e-12
        assert 0.0 <= e.target["dssim"] <= 1.0
        assert e.forward_ms > 0.0
    table = report.to_table()
    assert "t_rmse" in table and "mean" in table
    import json

    payload = json.loads(report.to_json())
    assert len(payload["examples"]) == len(pairs)
    assert "light_rmse_s" in payload["mean"]


def test_evaluate_parallel_matches_serial(pairs, monkeypatch):
    tcfg = TrainConfig(steps=2, batch_size=2)
    params, _ = fit(pairs, TINY, tcfg)
    monkeypatch.delenv("RELIGHT_THREADS", raising=False)
    serial = evaluate(pairs, params, TINY)
    monkeypatch.setenv("RELIGHT_THREADS", "2")
    parallel = evaluate(pairs, params, TINY)
    for a, b in zip(serial.examples, parallel.examples):
        assert a.target == b.target
        assert a.source == b.source
        assert a.light_rmse_s == b.light_rmse_s
