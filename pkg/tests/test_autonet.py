import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mhealth_tcn.autonet import (
    CheckpointError,
    ConfigError,
    ModelConfig,
    ShapeError,
    backward,
    forward,
    grad_check,
    init_params,
    load_checkpoint,
    predict,
    save_checkpoint,
    tiny_config,
)
from mhealth_tcn.autonet import layers as L
from mhealth_tcn.autonet.fused import stage_backward, stage_forward


def _mid_config(**kw):
    base = dict(n_channels=3, t_days=40, hidden=12, n_tasks=9)
    base.update(kw)
    return ModelConfig(**base)


def test_dropout_mask_rate_and_scale():
    rng = np.random.default_rng(0)
    m = L.dropout_mask((400_000,), 0.3, rng)
    kept = m > 0
    # binomial sd of the kept fraction is about 7e-4
    assert abs(kept.mean() - 0.7) < 0.004
    assert np.allclose(m[kept], m[kept][0])
    assert abs(m.mean() - 1.0) < 0.006


def test_dropout_eval_is_identity():
    x = np.arange(6.0)
    out, mask = L.dropout(x, 0.5, None, train=False)
    assert mask is None and np.array_equal(out, x)


def test_fused_stage_matches_unfused():
    rng = np.random.default_rng(1)
    z = rng.normal(size=(3, 4, 10, 5))
    pooled, idx, deriv = stage_forward(z, 0.5, np.random.default_rng(7), train=True)
    draws = np.random.default_rng(7).integers(0, 65536, z.shape, dtype=np.uint16)
    mask = (draws >= 32768) * 2.0
    a = np.tanh(z) * mask
    ref, ref_idx = L.bank_maxpool(a, 2, 2)
    assert np.array_equal(pooled, ref)
    assert np.array_equal(idx, ref_idx)
    g = rng.normal(size=pooled.shape)
    g_ref = L.bank_maxpool_backward(g, ref_idx, 10, 2, 2) * (1 - np.tanh(z) ** 2) * mask
    np.testing.assert_allclose(stage_backward(g, idx, deriv), g_ref, rtol=1e-14, atol=1e-15)


def test_eval_forward_is_deterministic():
    cfg = _mid_config()
    params = init_params(cfg, np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(5, 3, 40))
    assert np.array_equal(predict(params, cfg, x), predict(params, cfg, x))
    single, _ = forward(params, cfg, x[0])
    # batched matmuls may round differently from a single example
    np.testing.assert_allclose(single, predict(params, cfg, x)[0], rtol=1e-12)


def test_train_forward_varies_with_dropout():
    cfg = _mid_config()
    params = init_params(cfg, np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(5, 3, 40))
    a, _ = forward(params, cfg, x, train=True, rng=np.random.default_rng(1))
    b, _ = forward(params, cfg, x, train=True, rng=np.random.default_rng(2))
    assert not np.array_equal(a, b)
    with pytest.raises(ValueError):
        forward(params, cfg, x, train=True)


def test_heads_are_independent():
    cfg = _mid_config()
    params = init_params(cfg, np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(4, 3, 40))
    before = predict(params, cfg, x)
    params.head_w[2] += 1.0
    params.head_b[2] -= 0.5
    after = predict(params, cfg, x)
    changed = np.abs(after - before).max(axis=0) > 0
    assert changed.tolist() == [i == 2 for i in range(9)]


def test_head_gradient_only_from_own_task():
    cfg = _mid_config()
    params = init_params(cfg, np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(4, 3, 40))
    _, tape = forward(params, cfg, x)
    g = np.zeros((4, 9))
    g[:, 5] = 1.0
    grads = backward(params, cfg, tape, g)
    nonzero = np.abs(grads.head_w).sum(axis=1) > 0
    assert nonzero.tolist() == [i == 5 for i in range(9)]


def test_channels_have_separate_extractors():
    cfg = _mid_config()
    params = init_params(cfg, np.random.default_rng(0))
    assert params.conv1_w.shape[0] == 3
    shared = init_params(_mid_config(share_extractors=True), np.random.default_rng(0))
    assert shared.conv1_w.shape[0] == 1
    # perturbing channel 0's filters leaves the other channels' flattened features untouched
    x = np.random.default_rng(1).normal(size=(2, 3, 40))
    _, t0 = forward(params, cfg, x)
    params.conv1_w[0] += 0.3
    _, t1 = forward(params, cfg, x)
    per_channel = t0.flat.size // 2 // 3
    diff = np.abs(t1.flat - t0.flat).reshape(2, 3, per_channel).max(axis=(0, 2))
    assert diff[0] > 0 and diff[1] == 0 and diff[2] == 0


def test_grad_check_detects_wrong_backward():
    cfg = tiny_config(np.random.default_rng(3), n_tasks=2)

    def broken(params, cfg, tape, g):
        grads = backward(params, cfg, tape, g)
        grads.conv2_b *= 1.01
        return grads

    assert grad_check(cfg, seed=3) < 1e-4
    assert grad_check(cfg, seed=3, backward_fn=broken) > 1e-3


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(n_channels=3, t_days=20).validate()
    with pytest.raises(ConfigError):
        ModelConfig(n_channels=3, t_days=40, dropout_p=1.0).validate()
    ModelConfig(n_channels=3, t_days=33).validate()


def test_shape_errors():
    cfg = _mid_config()
    params = init_params(cfg, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        forward(params, cfg, np.zeros((2, 4, 40)))
    with pytest.raises(ValueError):
        forward(params, cfg, np.full((1, 3, 40), np.nan))
    with pytest.raises(ShapeError):
        L.conv1d(np.zeros((2, 5)), np.zeros((1, 3, 2)), np.zeros(1))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(33, 80), st.integers(1, 9), st.booleans())
def test_output_shape_and_range(d, t, tasks, share):
    cfg = ModelConfig(n_channels=d, t_days=t, hidden=8, n_tasks=tasks, share_extractors=share)
    params = init_params(cfg, np.random.default_rng(0))
    p = predict(params, cfg, np.random.default_rng(1).normal(size=(3, d, t)) * 5)
    assert p.shape == (3, tasks)
    assert ((p > 0) & (p < 1)).all()
    assert params.dense_w.shape == (8, d * cfg.conv2_filters * cfg.lengths()[3])


def test_checkpoint_round_trip(tmp_path):
    cfg = _mid_config(n_tasks=1, share_extractors=True, dropout_p=0.25)
    params = init_params(cfg, np.random.default_rng(4))
    path = save_checkpoint(tmp_path / "m.ckpt", cfg, params)
    cfg2, params2 = load_checkpoint(path)
    assert cfg2 == cfg
    assert all(np.array_equal(a, b) for a, b in zip(params.arrays(), params2.arrays()))


def test_checkpoint_rejects_damage(tmp_path):
    cfg = _mid_config()
    path = save_checkpoint(tmp_path / "m.ckpt", cfg, init_params(cfg, np.random.default_rng(0)))
    data = path.read_bytes()
    for bad in (b"XXXX" + data[4:], data[:-8], data + b"\0"):
        (tmp_path / "bad.ckpt").write_bytes(bad)
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "bad.ckpt")
