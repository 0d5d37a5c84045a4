import json
import math

import numpy as np
import pytest

from mhealth_tcn.autonet import ModelConfig, backward, forward, init_params, load_checkpoint
from mhealth_tcn.train import (
    TrainConfig,
    TrainError,
    bce_loss,
    bce_with_logits,
    multitask_loss,
    sgd_step,
    train_model,
    write_run,
)


def test_bce_values():
    assert bce_loss(1, 0.5) == pytest.approx(math.log(2))
    assert bce_loss(0, 0.1) == pytest.approx(-math.log(0.9))
    loss, grad = bce_with_logits(np.array([0.0, 2.0, -40.0]), np.array([1.0, 0.0, 1.0]))
    np.testing.assert_allclose(loss, [math.log(2), math.log1p(math.exp(2.0)), 40.0], rtol=1e-12)
    np.testing.assert_allclose(grad, [-0.5, 1 / (1 + math.exp(-2.0)), 1 / (1 + math.exp(40.0)) - 1], rtol=1e-12)
    y = np.array([[1, 0], [0, 1]])
    p = np.array([[0.9, 0.2], [0.3, 0.6]])
    expected = -(math.log(0.9) + math.log(0.8) + math.log(0.7) + math.log(0.6)) / 4
    assert multitask_loss(y, p) == pytest.approx(expected)
    with pytest.raises(TrainError):
        multitask_loss(y, p[:, :1])


def test_sgd_two_steps():
    cfg = ModelConfig(n_channels=1, t_days=33, hidden=2, n_tasks=1)
    params = init_params(cfg, np.random.default_rng(0)).map(lambda a: np.ones_like(a))
    grads = params.map(lambda a: np.full_like(a, 0.5))
    v = params.zeros_like()
    tc = TrainConfig(learning_rate=0.1, momentum=0.9)
    p1, v1 = sgd_step(params, grads, v, tc)
    p2, v2 = sgd_step(p1, grads, v1, tc)
    # v1 = -0.05, w1 = 0.95; v2 = 0.9 * -0.05 - 0.05 = -0.095, w2 = 0.855
    assert np.allclose(v1.head_b, -0.05) and np.allclose(p1.head_b, 0.95)
    assert np.allclose(v2.head_b, -0.095) and np.allclose(p2.head_b, 0.855)
    bad = grads.map(lambda a: a * np.nan)
    with pytest.raises(TrainError):
        sgd_step(params, bad, v, tc)


def test_weight_decay_term():
    cfg = ModelConfig(n_channels=1, t_days=33, hidden=2, n_tasks=1)
    params = init_params(cfg, np.random.default_rng(0)).map(lambda a: np.full_like(a, 2.0))
    zero = params.zeros_like()
    p1, _ = sgd_step(params, zero, zero, TrainConfig(learning_rate=0.1, l2=0.5))
    assert np.allclose(p1.head_w, 2.0 - 0.1 * 0.5 * 2.0)


@pytest.mark.parametrize("field,value", [("learning_rate", 0), ("patience", 0), ("batch_size", 0), ("momentum", 1.0), ("task", 9), ("l2", -1)])
def test_config_validation(field, value):
    with pytest.raises(TrainError):
        TrainConfig(**{field: value}).validate()


def _toy(n=60, t=40, d=3, seed=0):
    rng = np.random.default_rng(seed)
    y = (rng.random((n, 9)) < 0.5).astype(float)
    x = rng.normal(size=(n, t, d))
    x[:, :, 0] += 1.5 * (y[:, 0:1] - 0.5)
    x[:, :, 1] += 1.5 * (y[:, 1:2] - 0.5)
    return x, y


def test_single_task_gradient_matches_multitask_head():
    # an ST model is the MT model restricted to one head
    mt = ModelConfig(n_channels=3, t_days=40, hidden=6, n_tasks=9, dropout_p=0.0)
    st = ModelConfig(n_channels=3, t_days=40, hidden=6, n_tasks=1, dropout_p=0.0)
    pm = init_params(mt, np.random.default_rng(0))
    ps = pm.copy()
    ps.head_w, ps.head_b = pm.head_w[3:4].copy(), pm.head_b[3:4].copy()
    x, y = _toy(8)
    xm = x.transpose(0, 2, 1)
    _, tm = forward(pm, mt, xm)
    _, ts = forward(ps, st, xm)
    g = np.zeros((8, 9))
    _, g[:, 3] = bce_with_logits(tm.logits[:, 3], y[:, 3])
    gm = backward(pm, mt, tm, g)
    _, gs_logit = bce_with_logits(ts.logits, y[:, 3:4])
    gs = backward(ps, st, ts, gs_logit)
    for name in ("conv1_w", "conv2_w", "dense_w", "dense_b"):
        np.testing.assert_allclose(getattr(gm, name), getattr(gs, name), rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(gm.head_w[3], gs.head_w[0], rtol=1e-12)


def test_training_reduces_loss_and_is_deterministic():
    x, y = _toy()
    cfg = ModelConfig(n_channels=3, t_days=40, hidden=16)
    tc = TrainConfig(max_epochs=15, batch_size=8, seed=3)
    p1, h1 = train_model(x[:40], y[:40], x[40:], y[40:], cfg, tc)
    p2, h2 = train_model(x[:40], y[:40], x[40:], y[40:], cfg, tc)
    assert h1.train_loss == h2.train_loss
    assert all(np.array_equal(a, b) for a, b in zip(p1.arrays(), p2.arrays()))
    assert h1.train_loss[-1] < h1.train_loss[0]
    assert 0 <= h1.best_epoch < h1.epochs
    assert h1.val_mean_auc[h1.best_epoch] == max(h1.val_mean_auc)


def test_early_stopping_respects_patience():
    x, y = _toy()
    cfg = ModelConfig(n_channels=3, t_days=40, hidden=16)
    _, hist = train_model(x[:40], y[:40], x[40:], y[40:], cfg, TrainConfig(max_epochs=200, patience=3, seed=1))
    assert hist.epochs == hist.best_epoch + 4 or hist.epochs == 200


def test_single_task_mode_uses_one_column():
    x, y = _toy()
    cfg = ModelConfig(n_channels=3, t_days=40, hidden=8, n_tasks=1)
    params, hist = train_model(x[:40], y[:40], x[40:], y[40:], cfg, TrainConfig(max_epochs=3, task=1))
    assert params.head_w.shape == (1, 8)
    with pytest.raises(TrainError):
        train_model(x[:40], y[:40], None, None, cfg, TrainConfig(max_epochs=1))


def test_one_class_validation_falls_back_to_loss():
    x, y = _toy()
    yv = y[40:].copy()
    yv[:] = 0
    cfg = ModelConfig(n_channels=3, t_days=40, hidden=8)
    _, hist = train_model(x[:40], y[:40], x[40:], yv, cfg, TrainConfig(max_epochs=4))
    assert all(math.isnan(v) for v in hist.val_mean_auc)
    assert hist.val_loss[hist.best_epoch] == min(hist.val_loss)


def test_write_run(tmp_path):
    x, y = _toy()
    cfg = ModelConfig(n_channels=3, t_days=40, hidden=8)
    tc = TrainConfig(max_epochs=2)
    params, hist = train_model(x[:40], y[:40], x[40:], y[40:], cfg, tc)
    out = write_run(tmp_path / "run", cfg, tc, params, hist, extra={"note": 1})
    rows = (out / "history.csv").read_text().splitlines()
    assert rows[0] == "epoch,train_loss,val_loss,val_mean_auc" and len(rows) == 3
    meta = json.loads((out / "config.json").read_text())
    assert meta["model"]["hidden"] == 8 and meta["note"] == 1
    cfg2, p2 = load_checkpoint(out / "best.ckpt")
    assert cfg2 == cfg and np.array_equal(p2.dense_w, params.dense_w)


def test_loss_examples():
    assert bce_loss(0, 0.8) == pytest.approx(1.609438, abs=1e-6)
    y = np.array([[1, 0, 1, 1]])
    assert multitask_loss(y, np.full((1, 4), 0.5)) == pytest.approx(math.log(2))
    two = np.array([[1, 1]])
    p = np.array([[math.exp(-0.2), math.exp(-0.6)]])
    assert multitask_loss(two, p) == pytest.approx(0.4)
    assert multitask_loss(two, np.ones((1, 2)) - 1e-15) == pytest.approx(0.0, abs=1e-12)


def _ones_model():
    cfg = ModelConfig(n_channels=1, t_days=33, hidden=2, n_tasks=1)
    return init_params(cfg, np.random.default_rng(0)).map(lambda a: np.ones_like(a))


def test_sgd_plain_and_zero_cases():
    params = _ones_model()
    g = params.map(lambda a: np.full_like(a, 3.0))
    p1, _ = sgd_step(params, g, params.zeros_like(), TrainConfig(learning_rate=0.1, momentum=0.0))
    assert np.allclose(p1.dense_w, 1.0 - 0.3)
    p2, v2 = sgd_step(params, params.zeros_like(), params.zeros_like(), TrainConfig())
    assert all(np.array_equal(a, b) for a, b in zip(p2.arrays(), params.arrays()))


def test_sgd_two_step_displacement():
    params = _ones_model()
    g = params.map(lambda a: np.full_like(a, 2.0))
    tc = TrainConfig(learning_rate=0.01, momentum=0.9)
    p1, v1 = sgd_step(params, g, params.zeros_like(), tc)
    p2, _ = sgd_step(p1, g, v1, tc)
    np.testing.assert_allclose(p2.head_w - params.head_w, -0.01 * 2.0 - 0.019 * 2.0, rtol=1e-12)


def test_l2_decay_shrinks_norms_monotonically():
    rng = np.random.default_rng(0)
    params = _ones_model().map(lambda a: rng.normal(size=a.shape))
    zero = params.zeros_like()
    v = zero
    tc = TrainConfig(learning_rate=0.05, momentum=0.0, l2=0.5)
    norms = [[np.linalg.norm(a) for a in params.arrays()]]
    for _ in range(20):
        params, v = sgd_step(params, zero, v, tc)
        norms.append([np.linalg.norm(a) for a in params.arrays()])
    norms = np.array(norms)
    assert (np.diff(norms, axis=0) < 0).all()


def test_descent_on_fixed_batch():
    cfg = ModelConfig(n_channels=3, t_days=40, hidden=10)
    params = init_params(cfg, np.random.default_rng(2))
    x, y = _toy(16)
    xm = x.transpose(0, 2, 1)

    def batch_loss(p):
        _, tape = forward(p, cfg, xm, train=True, rng=np.random.default_rng(9))
        return bce_with_logits(tape.logits, y)[0].mean(), tape

    before, tape = batch_loss(params)
    _, g = bce_with_logits(tape.logits, y)
    grads = backward(params, cfg, tape, g / g.size)
    stepped, _ = sgd_step(params, grads, params.zeros_like(), TrainConfig(learning_rate=1e-4, momentum=0.0))
    after, _ = batch_loss(stepped)
    assert after < before


def test_mt_trunk_gradient_is_st_over_c():
    mt = ModelConfig(n_channels=3, t_days=40, hidden=6, n_tasks=9, dropout_p=0.0)
    st_cfg = ModelConfig(n_channels=3, t_days=40, hidden=6, n_tasks=1, dropout_p=0.0)
    pm = init_params(mt, np.random.default_rng(5))
    ps = pm.copy()
    ps.head_w, ps.head_b = pm.head_w[6:7].copy(), pm.head_b[6:7].copy()
    x, y = _toy(6)
    xm = x.transpose(0, 2, 1)
    _, tm = forward(pm, mt, xm)
    _, ts = forward(ps, st_cfg, xm)
    g = np.zeros((6, 9))
    g[:, 6] = bce_with_logits(tm.logits[:, 6], y[:, 6])[1] / 9  # (p - y) / C, other tasks zeroed
    gm = backward(pm, mt, tm, g)
    gs = backward(ps, st_cfg, ts, bce_with_logits(ts.logits, y[:, 6:7])[1])
    for name in ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "dense_w", "dense_b"):
        np.testing.assert_allclose(getattr(gm, name), getattr(gs, name) / 9, rtol=1e-10, atol=1e-16)


def test_best_params_reproduce_best_validation_auc():
    from mhealth_tcn.autonet import predict
    from mhealth_tcn.eval.metrics import mean_task_auc

    x, y = _toy()
    cfg = ModelConfig(n_channels=3, t_days=40, hidden=16)
    params, hist = train_model(x[:40], y[:40], x[40:], y[40:], cfg, TrainConfig(max_epochs=12, batch_size=8, seed=4))
    again, _ = mean_task_auc(predict(params, cfg, x[40:].transpose(0, 2, 1)), y[40:])
    assert again == hist.val_mean_auc[hist.best_epoch]


def test_degenerate_task_drives_probability_to_zero():
    from mhealth_tcn.autonet import predict

    x, y = _toy(40)
    y[:, 2] = 0
    cfg = ModelConfig(n_channels=3, t_days=40, hidden=8, n_tasks=1)
    params, hist = train_model(x, y, None, None, cfg, TrainConfig(max_epochs=60, task=2, batch_size=8))
    assert hist.train_loss[-1] < 0.05
    assert predict(params, cfg, x.transpose(0, 2, 1)).max() < 0.1
