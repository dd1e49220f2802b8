"""Tests for the relighting network and its checkpoints."""

import numpy as np
import pytest

from relightkit.prnet import (
    CheckpointError,
    PRNetConfig,
    confidence_weighted_average,
    encode,
    forward,
    gradcheck_config,
    init_params,
    load_checkpoint,
    predict_light,
    save_checkpoint,
    self_reconstruct,
    toy_config,
)
from relightkit.tensor import Tensor


def test_toy_config_parameter_budget():
    params = init_params(toy_config())
    assert params.n_params < 1_000_000
    assert params.n_params > 100_000


def test_config_validation():
    with pytest.raises(ValueError):
        PRNetConfig(resolution=60)  # not divisible by 2**4
    with pytest.raises(ValueError):
        PRNetConfig(kernel_size=4)
    with pytest.raises(ValueError):
        PRNetConfig(confidence_mode="other")
    with pytest.raises(ValueError):
        PRNetConfig(enc_channels=())


def test_init_is_deterministic_and_seed_sensitive():
    a = init_params(gradcheck_config(), seed=3)
    b = init_params(gradcheck_config(), seed=3)
    c = init_params(gradcheck_config(), seed=4)
    for name in a.names():
        np.testing.assert_array_equal(a[name].data, b[name].data)
    assert any(not np.array_equal(a[n].data, c[n].data) for n in a.names())


def test_forward_shapes_and_range():
    config = gradcheck_config()
    params = init_params(config)
    rng = np.random.default_rng(0)
    img = rng.random((16, 16, 3)).astype(np.float32)
    light = rng.random((4, 8, 3)).astype(np.float32)
    out = forward(params, config, img, light)
    assert out.image.shape == (16, 16, 3)
    assert out.light.shape == (4, 8, 3)
    assert out.confidence.shape == (4, 4, 32)
    assert 0.0 <= out.image.min() and out.image.max() <= 1.0
    assert (out.confidence > 0.0).all()


def test_encode_rejects_wrong_resolution():
    config = gradcheck_config()
    params = init_params(config)
    with pytest.raises(ValueError):
        encode(params, config, Tensor(np.zeros((8, 8, 3), dtype=np.float32)))


def test_output_depends_on_target_light():
    config = gradcheck_config()
    params = init_params(config)
    rng = np.random.default_rng(1)
    img = rng.random((16, 16, 3)).astype(np.float32)
    l1 = np.zeros((4, 8, 3), dtype=np.float32)
    l2 = np.ones((4, 8, 3), dtype=np.float32) * 5.0
    a = forward(params, config, img, l1).image
    b = forward(params, config, img, l2).image
    assert np.abs(a - b).max() > 0.0


def test_confidence_average_uniform_is_mean():
    rng = np.random.default_rng(2)
    values = Tensor(rng.random((3, 3, 5, 3)).astype(np.float32))
    conf = Tensor(np.full((3, 3, 5), 0.37, dtype=np.float32))
    got = confidence_weighted_average(values, conf)
    np.testing.assert_allclose(got.data, values.data.mean(axis=(0, 1)), rtol=1e-5)


def test_confidence_average_one_hot_selects_location():
    rng = np.random.default_rng(3)
    values = Tensor(rng.random((2, 2, 4, 3)).astype(np.float32))
    conf = np.full((2, 2, 4), 1e-6, dtype=np.float32)
    conf[1, 0, :] = 1e6
    got = confidence_weighted_average(values, Tensor(conf))
    np.testing.assert_allclose(got.data, values.data[1, 0], atol=1e-6)


def test_confidence_average_homogeneity():
    # scaling every location's weight for one light pixel by k > 0 leaves
    # that pixel's average unchanged
    rng = np.random.default_rng(4)
    values = Tensor(rng.random((2, 3, 4, 3)).astype(np.float32))
    conf = rng.random((2, 3, 4)).astype(np.float32) + 0.1
    base = confidence_weighted_average(values, Tensor(conf)).data
    scaled = conf.copy()
    scaled[:, :, 2] *= 57.0
    got = confidence_weighted_average(values, Tensor(scaled)).data
    np.testing.assert_allclose(got, base, rtol=1e-4)


def test_confidence_average_shared_weight_broadcast():
    rng = np.random.default_rng(5)
    values = Tensor(rng.random((2, 2, 4, 3)).astype(np.float32))
    conf = Tensor(rng.random((2, 2, 1)).astype(np.float32) + 0.1)
    got = confidence_weighted_average(values, conf)
    assert got.shape == (4, 3)


def test_predict_light_shapes_scalar_confidence():
    config = PRNetConfig(
        resolution=16,
        light_shape=(4, 8),
        enc_channels=(4, 8),
        light_embed=8,
        gn_groups=4,
        confidence_mode="scalar",
    )
    params = init_params(config)
    rng = np.random.default_rng(6)
    enc = encode(params, config, Tensor(rng.random((16, 16, 3)).astype(np.float32)))
    light, conf = predict_light(params, config, enc.bottleneck)
    assert light.shape == (4, 8, 3)
    assert conf.shape == (4, 4, 1)


def test_self_reconstruct_theta_zero_uses_own_light():
    config = gradcheck_config()
    params = init_params(config)
    rng = np.random.default_rng(7)
    img = rng.random((16, 16, 3)).astype(np.float32)
    out = self_reconstruct(params, config, img, theta_deg=0.0)
    same = forward(params, config, img, out.light)
    np.testing.assert_array_equal(out.image, same.image)


def test_checkpoint_round_trip(tmp_path):
    config = gradcheck_config()
    params = init_params(config, seed=9)
    save_checkpoint(tmp_path / "ckpt", params, config, meta={"step": 12})
    back, cfg, meta, opt = load_checkpoint(tmp_path / "ckpt")
    assert cfg == config
    assert meta == {"step": 12}
    assert opt is None
    for name in params.names():
        np.testing.assert_array_equal(back[name].data, params[name].data)


def test_checkpoint_with_optimizer_round_trip(tmp_path):
    from relightkit.optim import AdamState

    config = gradcheck_config()
    params = init_params(config)
    adam = AdamState(lr=2e-3)
    adam.ensure(params.tensors())
    adam.t = 5
    adam.m[0][:] = 0.25
    save_checkpoint(tmp_path / "ckpt", params, config, optimizer=adam)
    _, _, _, opt = load_checkpoint(tmp_path / "ckpt")
    assert opt is not None
    assert opt.t == 5
    assert opt.lr == 2e-3
    np.testing.assert_array_equal(opt.m[0], adam.m[0])


def test_checkpoint_detects_corruption(tmp_path):
    import json

    config = gradcheck_config()
    params = init_params(config)
    save_checkpoint(tmp_path / "ckpt", params, config)

    blob = (tmp_path / "ckpt" / "params.bin").read_bytes()
    (tmp_path / "ckpt" / "params.bin").write_bytes(blob[:100] + b"\0\0\0\0" + blob[104:])
    with pytest.raises(CheckpointError, match="checksum"):
        load_checkpoint(tmp_path / "ckpt")
    (tmp_path / "ckpt" / "params.bin").write_bytes(blob)

    manifest_path = tmp_path / "ckpt" / "manifest.json"
    manifest = json.loads(manifest_path.read_text())
    manifest["format_version"] = 99
    manifest_path.write_text(json.dumps(manifest))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(tmp_path / "ckpt")
