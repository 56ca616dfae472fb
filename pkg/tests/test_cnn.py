import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from netclass.cnn import (PARAM_NAMES, CnnConfig, CnnModel, HistoryRow, TrainingDiverged, batch_loss_and_grads,
                          conv2d, evaluate, forward, init_model, load_checkpoint, log_softmax, loss_and_grads,
                          maxpool, maxpool_backward, predict, save_checkpoint, sgd_step, softmax, train,
                          write_history)
from netclass.rng import RngStream

from oracles import central_diff, conv_direct

SMALL = CnnConfig(conv1_filters=1, conv2_filters=2, kernel=3, fc_units=4, input_size=10)


def small_model(seed=0, activation="relu"):
    cfg = CnnConfig(conv1_filters=1, conv2_filters=2, kernel=3, fc_units=4, input_size=10,
                    activation=activation, seed=seed)
    m = init_model(cfg)
    rng = np.random.default_rng(seed)
    for k in PARAM_NAMES:
        if k.endswith("_b"):
            m.params[k] = rng.normal(scale=0.1, size=m.params[k].shape)
    return m


def test_default_shapes():
    m = init_model(CnnConfig())
    _, c = forward(m, np.random.default_rng(0).random((48, 48)))
    assert c["z1"].shape == (3, 44, 44)
    assert c["p1"].shape == (3, 22, 22)
    assert c["z2"].shape == (5, 18, 18)
    assert c["p2"].shape == (5, 9, 9)
    assert c["flat"].shape == (405,)
    assert CnnConfig().flatten_size == 405
    assert m.params["fc1_w"].shape == (405, 50)


def test_batch_forward_matches_single():
    m = init_model(CnnConfig())
    x = np.random.default_rng(1).random((3, 48, 48))
    logits, _ = forward(m, x)
    for i in range(3):
        np.testing.assert_allclose(logits[i], forward(m, x[i])[0], rtol=1e-12, atol=1e-14)


def test_shape_mismatch():
    with pytest.raises(ValueError):
        forward(init_model(CnnConfig()), np.zeros((40, 40)))


def test_config_validation():
    with pytest.raises(ValueError):
        CnnConfig(kernel=4)
    with pytest.raises(ValueError):
        CnnConfig(input_size=47)
    with pytest.raises(ValueError):
        CnnConfig(activation="sigmoid")


def test_zero_image_gives_uniform_softmax():
    logits, _ = forward(init_model(CnnConfig()), np.zeros((48, 48)))
    np.testing.assert_array_equal(logits, [0.0, 0.0])
    np.testing.assert_array_equal(softmax(logits), [0.5, 0.5])
    loss, _ = loss_and_grads(init_model(CnnConfig()), np.zeros((48, 48)), 0)
    assert loss == pytest.approx(math.log(2), abs=1e-15)


def test_all_ones_filter_sums_patches():
    x = np.arange(36, dtype=np.float64).reshape(1, 6, 6)
    w = np.ones((1, 1, 5, 5))
    out = conv2d(x, w, np.zeros(1))
    assert out.shape == (1, 2, 2)
    for i in range(2):
        for j in range(2):
            assert out[0, i, j] == x[0, i:i + 5, j:j + 5].sum()
    np.testing.assert_array_equal(out, conv_direct(x, w, np.zeros(1)))


@pytest.mark.parametrize("seed", range(20))
def test_conv_matches_direct_loop_exactly(seed):
    rng = np.random.default_rng(seed)
    C, F = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    k = int(rng.choice([1, 3, 5]))
    H, W = int(rng.integers(k, k + 6)), int(rng.integers(k, k + 6))
    x = rng.normal(size=(C, H, W))
    w = rng.normal(size=(F, C, k, k))
    b = rng.normal(size=F)
    np.testing.assert_array_equal(conv2d(x, w, b), conv_direct(x, w, b))


@pytest.mark.parametrize("activation", ["relu", "tanh"])
@pytest.mark.parametrize("seed", range(3))
def test_gradients_match_finite_differences(seed, activation):
    m = small_model(seed, activation)
    x = np.random.default_rng(100 + seed).random((10, 10))
    label = seed % 2
    _, grads = loss_and_grads(m, x, label)
    for k in PARAM_NAMES:
        num = central_diff(lambda: loss_and_grads(m, x, label)[0], m.params[k], 1e-4)
        np.testing.assert_allclose(grads[k], num, rtol=1e-4, atol=1e-8, err_msg=k)


def test_duplicate_batch_equals_single():
    m = small_model(1)
    x = np.random.default_rng(0).random((10, 10))
    loss1, g1 = loss_and_grads(m, x, 1)
    loss2, g2 = batch_loss_and_grads(m, np.stack([x, x]), [1, 1])
    assert loss2 == pytest.approx(loss1, rel=1e-15)
    for k in PARAM_NAMES:
        np.testing.assert_allclose(g2[k], g1[k], rtol=1e-15)


def test_label_out_of_range():
    with pytest.raises(ValueError):
        loss_and_grads(small_model(), np.zeros((10, 10)), 2)


def test_non_finite_loss_reports_norms():
    m = small_model()
    m.params["fc2_w"][:] = np.nan
    with pytest.raises(FloatingPointError, match="fc2_w"):
        loss_and_grads(m, np.ones((10, 10)), 0)


def test_sgd_step_examples():
    m = small_model()
    zero = {k: np.zeros_like(v) for k, v in m.params.items()}
    assert np.array_equal(sgd_step(m, zero, 0.5).flat(), m.flat())
    ones = {k: np.ones_like(v) for k, v in m.params.items()}
    assert np.array_equal(sgd_step(m, ones, 0.0).flat(), m.flat())
    m.params["fc2_b"][0] = 1.0
    g = dict(zero, fc2_b=np.array([0.5, 0.0]))
    assert sgd_step(m, g, 0.01).params["fc2_b"][0] == 0.995
    with pytest.raises(ValueError):
        sgd_step(m, dict(zero, fc2_b=np.zeros(3)), 0.1)


@settings(max_examples=1000, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=10), st.floats(-100, 100))
def test_softmax_properties(z, shift):
    z = np.array(z)
    p = softmax(z)
    assert abs(p.sum() - 1.0) < 1e-12
    np.testing.assert_allclose(softmax(z + shift), p, rtol=1e-9, atol=1e-15)
    np.testing.assert_allclose(np.exp(log_softmax(z)), p, rtol=1e-9, atol=1e-15)


def test_maxpool_routes_to_argmax():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 6, 6))
    out, arg = maxpool(x, 2)
    for c in range(2):
        for i in range(3):
            for j in range(3):
                assert out[c, i, j] == x[c, 2 * i:2 * i + 2, 2 * j:2 * j + 2].max()
    d = rng.normal(size=out.shape)
    back = maxpool_backward(d, arg, 2)
    assert back.shape == x.shape
    assert np.count_nonzero(back) == d.size
    assert back.sum() == pytest.approx(d.sum())
    assert np.array_equal(back != 0, x == np.kron(out, np.ones((2, 2)))[:, :6, :6])


def constant_dataset(n_per_class, size=10, seed=0):
    rng = np.random.default_rng(seed)
    X = np.concatenate([np.full((n_per_class, size, size), 0.1), np.full((n_per_class, size, size), 0.9)])
    X = X + rng.normal(scale=1e-3, size=X.shape)
    y = np.repeat([0, 1], n_per_class)
    return X, y


def test_train_separable_constant_images():
    # batch 10: with the default batch 100 the 100-image set gives a single step per epoch
    cfg = CnnConfig(input_size=48, epochs=10, patience=10, batch=10)
    X, y = constant_dataset(50, 48)
    model, hist = train(init_model(cfg), (X, y), (X, y), cfg)
    assert min(r.val_error for r in hist) == 0.0
    assert evaluate(model, X, y)[0] == 0.0


def test_single_sample_loss_non_increasing():
    cfg = CnnConfig(conv1_filters=1, conv2_filters=2, kernel=3, fc_units=4, input_size=10, epochs=5,
                    patience=10, lr=0.01)
    x = np.random.default_rng(0).random((1, 10, 10))
    m = init_model(cfg)
    _, hist = train(m, (x, [1]), (x, [1]), cfg)
    losses = [r.train_loss for r in hist]
    assert len(losses) == 5
    assert all(b <= a + 1e-6 for a, b in zip(losses, losses[1:]))


def test_early_stopping_restores_best():
    cfg = CnnConfig(conv1_filters=1, conv2_filters=2, kernel=3, fc_units=4, input_size=10, epochs=50,
                    patience=2, lr=0.0)
    X, y = constant_dataset(5)
    m = init_model(cfg)
    best, hist = train(m, (X, y), (X, y), cfg)
    assert len(hist) == 3  # no change after epoch 1 -> two stale epochs
    assert np.array_equal(best.flat(), m.flat())


def test_training_is_bit_identical_and_thread_invariant():
    cfg = CnnConfig(conv1_filters=2, conv2_filters=2, kernel=3, fc_units=6, input_size=10, epochs=3,
                    batch=7, lr=0.05, seed=4)
    X = np.random.default_rng(5).random((30, 10, 10))
    y = (X.mean(axis=(1, 2)) > 0.5).astype(int)
    a, ha = train(init_model(cfg), (X, y), (X, y), cfg)
    b, hb = train(init_model(cfg), (X, y), (X, y), cfg)
    c, hc = train(init_model(cfg), (X, y), (X, y), cfg, threads=4)
    assert ha == hb == hc
    assert np.array_equal(a.flat(), b.flat())
    assert np.array_equal(a.flat(), c.flat())


def test_divergence_keeps_history():
    cfg = CnnConfig(conv1_filters=1, conv2_filters=2, kernel=3, fc_units=4, input_size=10, epochs=20,
                    patience=20)
    X, y = constant_dataset(5)
    m = init_model(cfg)
    m.params["fc1_w"][:] = 1e308
    m.params["fc1_b"][:] = 1e308
    with np.errstate(all="ignore"), pytest.raises(TrainingDiverged, match="epoch 1") as info:
        train(m, (X, y), (X, y), cfg)
    assert info.value.history == []


def test_train_rejects_bad_sets():
    cfg = SMALL
    X, y = constant_dataset(3)
    with pytest.raises(ValueError):
        train(init_model(cfg), (X[:0], y[:0]), (X, y), cfg)
    with pytest.raises(ValueError):
        train(init_model(cfg), (X, y + 1), (X, y), cfg)


def test_evaluate_examples():
    m = init_model(SMALL)
    m.params["fc2_b"][:] = [1.0, 0.0]
    for k in ("fc2_w",):
        m.params[k][:] = 0.0
    X = np.random.default_rng(0).random((20, 10, 10))
    err, conf = evaluate(m, X, np.zeros(20, dtype=int))
    assert err == 0.0 and conf.tolist() == [[20, 0], [0, 0]]
    m.params["fc2_b"][:] = 0.0
    assert np.all(predict(m, X) == 0)  # ties go to class 0


def test_random_model_near_chance():
    X = np.random.default_rng(0).random((1000, 48, 48))
    y = np.repeat([0, 1], 500)
    errs = []
    for seed in range(5):
        err, conf = evaluate(init_model(CnnConfig(seed=seed)), X, y)
        assert conf.sum(axis=1).tolist() == [500, 500]
        errs.append(err)
    assert all(0.4 <= e <= 0.6 for e in errs)


@settings(max_examples=1000, deadline=None)
@given(st.lists(st.integers(0, 2), min_size=1, max_size=40), st.integers(0, 2**31))
def test_confusion_counting_identity(labels, seed):
    cfg = CnnConfig(conv1_filters=1, conv2_filters=1, kernel=3, fc_units=3, input_size=10, classes=3, seed=seed)
    m = init_model(cfg)
    y = np.array(labels)
    X = RngStream(seed).random((len(y), 10, 10))
    err, conf = evaluate(m, X, y)
    assert conf.sum() == len(y)
    assert conf.sum(axis=1).tolist() == np.bincount(y, minlength=3).tolist()
    assert err == pytest.approx(1 - np.trace(conf) / len(y))


def test_checkpoint_roundtrip(tmp_path):
    m = init_model(CnnConfig(seed=9))
    save_checkpoint(m, tmp_path / "m.ckpt")
    raw = (tmp_path / "m.ckpt").read_bytes()
    assert raw.startswith(b"NETCLASS-CNN 1\n")
    back = load_checkpoint(tmp_path / "m.ckpt")
    assert back.cfg == m.cfg
    assert np.array_equal(back.flat(), m.flat())
    assert len(raw.split(b"\n", 2)[2]) == 8 * m.n_params
    (tmp_path / "t.ckpt").write_bytes(raw[:-8])
    with pytest.raises(ValueError, match="truncated"):
        load_checkpoint(tmp_path / "t.ckpt")


def test_history_csv(tmp_path):
    write_history([HistoryRow(1, 0.5, 0.25), HistoryRow(2, 0.25, 0.125)], tmp_path / "h.csv")
    assert (tmp_path / "h.csv").read_text().splitlines() == ["epoch,train_loss,val_error", "1,0.5,0.25",
                                                               "2,0.25,0.125"]


def test_model_copy_is_independent():
    m = init_model(SMALL)
    c = m.copy()
    c.params["fc1_b"][0] = 5.0
    assert m.params["fc1_b"][0] == 0.0
    assert isinstance(c, CnnModel)
