"""Network forward/backward semantics, gradient checks, and serialization."""

from dataclasses import replace

import numpy as np
import pytest

from stuckwatch.cnn import (
    CnnConfig,
    CnnModel,
    ConvStage,
    backward,
    batch_loss,
    conv1d,
    feature_map,
    forward,
    init_cnn,
    load_cnn,
    maxpool1d,
    pack_params,
    predict_batched,
    predict_window,
    save_cnn,
    train_cnn,
    unpack_params,
    window_loss,
)
from stuckwatch.errors import DataError, TrainingError, UsageError
from stuckwatch.rng import Stream

# Small architecture used for gradient checks and training toys: 308
# parameters, window 32.
SMALL = CnnConfig(
    window=32,
    stage1=ConvStage(kernel=5, filters=4, pool=2),
    stage2=ConvStage(kernel=3, filters=4, pool=2),
    merge=ConvStage(kernel=3, filters=2, pool=2),
    learning_rate=0.01,
    batch_size=32,
    epochs=6,
    seed=7,
)


def test_default_spatial_lengths_and_flat_dim():
    config = CnnConfig()
    assert config.spatial_lengths() == [180, 174, 87, 83, 41, 39, 19]
    assert config.flat_dim() == 32 * 19


def test_small_config_has_308_parameters():
    model = init_cnn(SMALL)
    assert model.n_params() == 308


def test_default_config_parameter_count():
    model = init_cnn(CnnConfig())
    assert model.n_params() == 25122


def test_pooling_exhaustion_is_rejected():
    bad = CnnConfig(window=16, stage1=ConvStage(3, 4, 16))
    with pytest.raises(UsageError):
        bad.spatial_lengths()


def test_oversized_kernel_is_rejected():
    bad = CnnConfig(window=8, stage1=ConvStage(9, 4, 1))
    with pytest.raises(UsageError):
        bad.spatial_lengths()
    bad = CnnConfig(window=180, merge=ConvStage(99, 4, 1))
    with pytest.raises(UsageError):
        bad.spatial_lengths()


def test_config_validation_errors():
    with pytest.raises(UsageError):
        replace(SMALL, learning_rate=0.0).validate()
    with pytest.raises(UsageError):
        replace(SMALL, batch_size=0).validate()
    with pytest.raises(UsageError):
        replace(SMALL, epochs=-1).validate()
    with pytest.raises(UsageError):
        replace(SMALL, decision_threshold=1.0).validate()
    with pytest.raises(UsageError):
        replace(SMALL, window=0).validate()


def test_zero_parameters_give_even_odds():
    model = init_cnn(SMALL)
    for name in model.params:
        model.params[name] = np.zeros_like(model.params[name])
    probs = forward(model, np.zeros((3, 6, 32)))
    assert np.allclose(probs, 0.5)
    single = forward(model, np.zeros((6, 32)))
    assert single.shape == (2,)
    assert np.allclose(single, 0.5)


def test_hand_computed_forward():
    # Identity-sized stages (kernel 1, one filter, no pooling) reduce the
    # network to: per-axis ReLU passthrough, a merge sum over the six axes,
    # then the dense map.  Every number below is checkable by hand.
    config = CnnConfig(window=4,
                       stage1=ConvStage(1, 1, 1),
                       stage2=ConvStage(1, 1, 1),
                       merge=ConvStage(1, 1, 1))
    model = init_cnn(config)
    for g in range(2):
        model.params[f"group{g}.conv1.w"] = np.ones((1, 1, 1))
        model.params[f"group{g}.conv1.b"] = np.zeros(1)
        model.params[f"group{g}.conv2.w"] = np.ones((1, 1, 1))
        model.params[f"group{g}.conv2.b"] = np.zeros(1)
    model.params["merge.conv.w"] = np.ones((1, 6, 1))
    model.params["merge.conv.b"] = np.zeros(1)
    model.params["dense.w"] = np.array([[1.0, 0.0, 0.0, 0.0],
                                        [0.0, 0.5, 0.0, 0.0]])
    model.params["dense.b"] = np.array([-5.0, -4.0])

    x = np.empty((6, 4))
    x[0] = 1.0
    x[1] = 2.0
    x[2] = 3.0
    x[3:] = -1.0  # accelerometer axes are negative: ReLU zeroes them out
    probs = forward(model, x)
    # Merged map is 1+2+3 = 6 at every position, so the logits are
    # 1*6 - 5 = 1 and 0.5*6 - 4 = -1.
    assert probs[0] == pytest.approx(1.0 / (1.0 + np.exp(-1.0)), rel=1e-12)
    assert probs[1] == pytest.approx(1.0 / (1.0 + np.exp(1.0)), rel=1e-12)


def test_conv1d_matches_direct_loops():
    stream = Stream(11)
    x = stream.normals(2 * 3 * 9).reshape(2, 3, 9)
    w = stream.normals(4 * 3 * 3).reshape(4, 3, 3)
    b = stream.normals(4)
    out = conv1d(x, w, b)
    assert out.shape == (2, 4, 7)
    for bi in range(2):
        for f in range(4):
            for t in range(7):
                expected = b[f] + float((x[bi, :, t:t + 3] * w[f]).sum())
                assert out[bi, f, t] == pytest.approx(expected, rel=1e-12)


def test_maxpool_ties_and_remainder():
    x = np.array([[[1.0, 1.0, 3.0, 3.0, 9.0]]])
    out, idx = maxpool1d(x, 2)
    assert np.array_equal(out, np.array([[[1.0, 3.0]]]))
    # Ties take the first occurrence; the trailing 9.0 is dropped.
    assert np.array_equal(idx, np.array([[[0, 0]]]))
    passthrough, idx1 = maxpool1d(x, 1)
    assert passthrough is x
    assert np.all(idx1 == 0)


def test_window_loss_examples():
    assert window_loss(np.array([0.5, 0.5]), np.array([0.0, 1.0])) == pytest.approx(
        2.0 * np.log(2.0), rel=1e-12)
    near_perfect = window_loss(np.array([1.0, 0.0]), np.array([1.0, 0.0]))
    assert 0.0 <= near_perfect < 1e-5
    wrong = window_loss(np.array([1.0, 1.0]), np.array([0.0, 0.0]))
    assert wrong > 30.0  # clamped at 1e-7, so about 2 * 16.1


def test_batch_loss_is_mean_of_window_losses():
    stream = Stream(12)
    probs = stream.uniforms(10).reshape(5, 2)
    labels = (stream.uniforms(10) < 0.5).astype(np.float64).reshape(5, 2)
    expected = np.mean([window_loss(probs[i], labels[i]) for i in range(5)])
    assert batch_loss(probs, labels) == pytest.approx(expected, rel=1e-12)


def test_backward_at_zero_parameters():
    model = init_cnn(SMALL)
    for name in model.params:
        model.params[name] = np.zeros_like(model.params[name])
    x = Stream(13).normals(6 * 32).reshape(6, 32)
    loss, grads = backward(model, x, np.array([1.0, 1.0]))
    assert loss == pytest.approx(2.0 * np.log(2.0), rel=1e-9)
    # Even odds against labels (1, 1) push each head's bias by -0.5; with a
    # zero dense matrix nothing propagates further down.
    assert np.allclose(grads["dense.b"], [-0.5, -0.5])
    assert np.all(grads["dense.w"] == 0.0)
    for name, grad in grads.items():
        if name.startswith(("group", "merge")):
            assert np.all(grad == 0.0), name


def _numeric_loss(model, vector, x, labels):
    unpack_params(model, vector)
    probs = forward(model, x)
    return batch_loss(probs, labels)


# Finite differences are only a valid oracle away from ReLU and pool-argmax
# kinks; these seeds give evaluation points with no kink inside the +-eps
# band (clean points sit near 1e-8, kink crossings near 1e-2).
@pytest.mark.parametrize("seed", [2, 4])
def test_gradients_match_central_differences(seed):
    config = replace(SMALL, seed=seed)
    model = init_cnn(config)
    stream = Stream(100 + seed)
    x = stream.normals(3 * 6 * 32).reshape(3, 6, 32)
    labels = (stream.uniforms(6) < 0.5).astype(np.float64).reshape(3, 2)
    _, grads = backward(model, x, labels)
    analytic = np.concatenate([grads[name].ravel() for name in model.param_order])
    theta = pack_params(model)
    eps = 1e-4
    numeric = np.empty_like(theta)
    for i in range(theta.size):
        up, down = theta.copy(), theta.copy()
        up[i] += eps
        down[i] -= eps
        numeric[i] = (_numeric_loss(model, up, x, labels)
                      - _numeric_loss(model, down, x, labels)) / (2.0 * eps)
    rel = np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    assert float(rel.max()) < 1e-3


def test_translation_equivariance_without_pooling():
    config = CnnConfig(window=16,
                       stage1=ConvStage(3, 2, 1),
                       stage2=ConvStage(3, 2, 1),
                       merge=ConvStage(3, 2, 1),
                       seed=3)
    model = init_cnn(config)
    base = Stream(14).normals(6 * 17).reshape(6, 17)
    out1 = feature_map(model, base[:, :16])[0]
    out2 = feature_map(model, base[:, 1:])[0]
    # With valid convs and no pooling, shifting the input by one sample
    # shifts the feature map by one position over the overlap.
    assert np.allclose(out2[:, :-1], out1[:, 1:], rtol=1e-12, atol=1e-12)


def _separable_windows(n, seed):
    stream = Stream(seed)
    x = 0.3 * stream.normals(n * 6 * 32).reshape(n, 6, 32)
    labels = (stream.uniforms(2 * n) < 0.5).astype(np.float64).reshape(n, 2)
    for i in range(n):
        x[i, :3] += 1.0 if labels[i, 0] else -1.0
        x[i, 3:] += 1.0 if labels[i, 1] else -1.0
    return x, labels


def test_training_solves_a_separable_problem():
    x, labels = _separable_windows(200, seed=15)
    config = replace(SMALL, epochs=10)
    model = init_cnn(config)
    model, history = train_cnn(model, x, labels)
    assert len(history) == config.epochs
    assert all(later <= earlier for earlier, later in zip(history, history[1:]))
    assert history[-1] < 0.35
    probs, flags = predict_window(model, x)
    for head in range(2):
        accuracy = float((flags[:, head] == labels[:, head]).mean())
        assert accuracy >= 0.95


def test_zero_learning_rate_keeps_parameters():
    x, labels = _separable_windows(64, seed=16)
    model = init_cnn(SMALL)
    before = pack_params(model).copy()
    model.config = replace(SMALL, learning_rate=0.0, epochs=2)
    model, history = train_cnn(model, x, labels)
    assert len(history) == 2
    assert np.array_equal(pack_params(model), before)
    assert history[0] == pytest.approx(history[1], rel=1e-12)


def test_single_class_head_is_refused():
    x, labels = _separable_windows(32, seed=17)
    labels[:, 0] = 1.0
    with pytest.raises(TrainingError, match="imu"):
        train_cnn(init_cnn(SMALL), x, labels)
    labels[:, 0] = (Stream(18).uniforms(32) < 0.5).astype(np.float64)
    labels[:, 1] = 0.0
    with pytest.raises(TrainingError, match="accelerometer"):
        train_cnn(init_cnn(SMALL), x, labels)


def test_training_is_deterministic():
    x, labels = _separable_windows(96, seed=19)
    runs = []
    for _ in range(2):
        model, history = train_cnn(init_cnn(SMALL), x, labels)
        runs.append((pack_params(model), history))
    assert np.array_equal(runs[0][0], runs[1][0])
    assert runs[0][1] == runs[1][1]


def test_init_is_seeded_and_bounded():
    a = init_cnn(SMALL)
    b = init_cnn(SMALL)
    c = init_cnn(replace(SMALL, seed=8))
    assert np.array_equal(pack_params(a), pack_params(b))
    assert not np.array_equal(pack_params(a), pack_params(c))
    for name, value in a.params.items():
        if name.endswith(".b"):
            assert np.all(value == 0.0)
        else:
            shape = value.shape
            if name.startswith("dense"):
                fan_in, fan_out = shape[1], shape[0]
            else:
                fan_in = shape[1] * shape[2]
                fan_out = shape[0] * shape[2]
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            assert float(np.abs(value).max()) <= limit


def test_predict_window_threshold_semantics():
    model = init_cnn(SMALL)
    x = Stream(20).normals(4 * 6 * 32).reshape(4, 6, 32)
    probs, flags = predict_window(model, x)
    assert np.array_equal(flags, (probs >= SMALL.decision_threshold).astype(np.uint8))
    _, all_on = predict_window(model, x, threshold=0.0)
    assert np.all(all_on == 1)
    _, strict = predict_window(model, x, threshold=0.25)
    assert np.array_equal(strict, (probs >= 0.25).astype(np.uint8))
    single_probs, single_flags = predict_window(model, x[0])
    assert single_probs.shape == (2,) and single_flags.shape == (2,)


def test_predict_batched_matches_forward():
    model = init_cnn(SMALL)
    x = Stream(21).normals(11 * 6 * 32).reshape(11, 6, 32)
    assert np.array_equal(predict_batched(model, x, batch=4), forward(model, x))
    empty = predict_batched(model, np.empty((0, 6, 32)))
    assert empty.shape == (0, 2)


def test_input_shape_validation():
    model = init_cnn(SMALL)
    with pytest.raises(DataError):
        forward(model, np.zeros((2, 5, 32)))
    with pytest.raises(DataError):
        forward(model, np.zeros((2, 6, 31)))
    with pytest.raises(DataError):
        train_cnn(model, np.zeros((4, 6, 32)), np.zeros(4))


def test_save_load_round_trip(tmp_path):
    model = init_cnn(SMALL)
    path = tmp_path / "net.model"
    save_cnn(model, path)
    loaded = load_cnn(path)
    assert loaded.config == model.config
    for name in model.param_order:
        # Storage is float32, so the round trip quantizes.
        expected = model.params[name].astype("<f4").astype(np.float64)
        assert np.array_equal(loaded.params[name], expected)
    # Saving the loaded model reproduces the file byte for byte.
    second = tmp_path / "net2.model"
    save_cnn(loaded, second)
    assert path.read_bytes() == second.read_bytes()


def test_load_rejects_corrupt_files(tmp_path):
    model = init_cnn(SMALL)
    path = tmp_path / "net.model"
    save_cnn(model, path)
    raw = path.read_bytes()

    with pytest.raises(DataError):
        load_cnn(tmp_path / "missing.model")

    bad = tmp_path / "magic.model"
    bad.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(DataError):
        load_cnn(bad)

    truncated = tmp_path / "short.model"
    truncated.write_bytes(raw[:-8])
    with pytest.raises(DataError):
        load_cnn(truncated)

    import json
    import struct

    header_len = struct.unpack("<I", raw[4:8])[0]
    header = json.loads(raw[8:8 + header_len])
    header["format"] = "other"
    hb = json.dumps(header, sort_keys=True).encode()
    wrong = tmp_path / "format.model"
    wrong.write_bytes(raw[:4] + struct.pack("<I", len(hb)) + hb + raw[8 + header_len:])
    with pytest.raises(DataError):
        load_cnn(wrong)


def test_pack_unpack_round_trip():
    model = init_cnn(SMALL)
    vector = pack_params(model)
    clone = init_cnn(replace(SMALL, seed=99))
    unpack_params(clone, vector)
    for name in model.param_order:
        assert np.array_equal(clone.params[name], model.params[name])
    with pytest.raises(DataError):
        unpack_params(clone, vector[:-1])
