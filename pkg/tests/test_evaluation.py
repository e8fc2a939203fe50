"""Tests for scoring, per-case breakdowns, and the detector evaluators."""

import copy
from dataclasses import replace

import numpy as np
import pytest

from conftest import small_dataset, wavy_trace
from stuckwatch.cnn import CnnConfig, ConvStage, init_cnn, predict_batched, train_cnn
from stuckwatch.errors import DataError
from stuckwatch.evaluation import (
    EvalOutcome,
    breakdown,
    eval_sample_indices,
    evaluate_cnn,
    evaluate_tree,
    score,
    transfer_experiment,
)
from stuckwatch.faults import ALL_FAULT_CASES
from stuckwatch.features import (
    derivative_scale,
    make_windows,
    tree_feature_matrix,
    tree_feature_names,
)
from stuckwatch.telemetry import SensorKind
from stuckwatch.tree import TreeParams, train_tree
from stuckwatch.tree import predict as tree_predict

WINDOW = 64
STRIDE = 5

CNN_CONFIG = CnnConfig(
    window=WINDOW,
    stage1=ConvStage(kernel=7, filters=8, pool=2),
    stage2=ConvStage(kernel=5, filters=8, pool=2),
    merge=ConvStage(kernel=3, filters=8, pool=2),
    learning_rate=0.003,
    batch_size=64,
    epochs=2,
    seed=99,
    decision_threshold=0.5,
)


@pytest.fixture(scope="module")
def trained():
    """A small dataset plus a tree and a network trained on its train split."""
    dataset = small_dataset(seed=60, trajectories=10, n=400)
    scale = derivative_scale(wavy_trace(601, SensorKind.IMU, 600))
    acc_scale = derivative_scale(
        wavy_trace(602, SensorKind.ACCELEROMETER, 600, noise_sigma=0.05,
                   nominal=(-5.0, 5.0))
    )
    xs, ys = [], []
    for traj in dataset.subset(dataset.train_indices):
        xs.append(tree_feature_matrix(traj.imu, scale))
        ys.append(traj.label_imu)
    tree = train_tree(
        np.concatenate(xs), np.concatenate(ys), TreeParams(),
        feature_names=tree_feature_names(), trained_on="imu",
    )
    windows = make_windows(dataset, WINDOW, 8, dataset.train_indices)
    cnn, _ = train_cnn(init_cnn(CNN_CONFIG), windows.x, windows.labels)
    return dataset, tree, cnn, scale, acc_scale


def test_score_perfect_predictions():
    labels = np.array([0, 1, 1, 0, 1, 0, 0, 1], dtype=np.uint8)
    s = score(labels, labels)
    assert s.precision == 1.0
    assert s.recall == 1.0
    assert s.counts.fp == 0
    assert s.counts.fn == 0
    assert s.counts.tp == 4
    assert s.counts.tn == 4
    assert s.counts.total == 8


def test_score_known_example():
    labels = np.array([1, 1, 1, 1, 0, 0, 0, 0], dtype=np.uint8)
    flags = np.array([1, 1, 1, 0, 1, 0, 0, 0], dtype=np.uint8)
    s = score(flags, labels)
    assert (s.counts.tp, s.counts.fp, s.counts.fn, s.counts.tn) == (3, 1, 1, 3)
    assert s.precision == 0.75
    assert s.recall == 0.75


def test_score_matches_direct_counts():
    rng = np.random.default_rng(7)
    for _ in range(20):
        labels = rng.integers(0, 2, size=60).astype(np.uint8)
        flags = rng.integers(0, 2, size=60).astype(np.uint8)
        s = score(flags, labels)
        assert s.counts.tp == int(((flags == 1) & (labels == 1)).sum())
        assert s.counts.fp == int(((flags == 1) & (labels == 0)).sum())
        assert s.counts.fn == int(((flags == 0) & (labels == 1)).sum())
        assert s.counts.tn == int(((flags == 0) & (labels == 0)).sum())
        if s.counts.tp + s.counts.fp:
            assert s.precision == s.counts.tp / (s.counts.tp + s.counts.fp)
        if s.counts.tp + s.counts.fn:
            assert s.recall == s.counts.tp / (s.counts.tp + s.counts.fn)


def test_score_empty_denominator_conventions():
    zeros = np.zeros(6, dtype=np.uint8)
    s = score(zeros, zeros)
    assert s.precision == 1.0
    assert s.recall == 1.0

    flags = np.array([1, 0, 1, 0, 0, 0], dtype=np.uint8)
    s = score(flags, zeros)
    assert s.precision == 0.0
    assert s.recall == 1.0

    s = score(zeros, flags)
    assert s.precision == 1.0
    assert s.recall == 0.0


def test_score_input_validation():
    ones = np.ones(5, dtype=np.uint8)
    with pytest.raises(DataError):
        score(ones, np.ones(4, dtype=np.uint8))
    with pytest.raises(DataError):
        score(np.empty(0, dtype=np.uint8), np.empty(0, dtype=np.uint8))
    with pytest.raises(DataError):
        score(np.ones((5, 1), dtype=np.uint8), np.ones((5, 1), dtype=np.uint8))


def _clean_and_noisy_ids():
    clean = next(i for i, c in enumerate(ALL_FAULT_CASES) if not c.noisy)
    noisy = next(i for i, c in enumerate(ALL_FAULT_CASES) if c.noisy)
    return clean, noisy


def test_breakdown_per_case_counts():
    clean, noisy = _clean_and_noisy_ids()
    labels = np.zeros(40, dtype=np.uint8)
    case_ids = np.full(40, -1, dtype=np.int8)
    labels[0:10] = 1
    case_ids[0:10] = clean
    labels[10:20] = 1
    case_ids[10:20] = noisy
    flags = np.zeros(40, dtype=np.uint8)
    flags[0:7] = 1
    flags[10:13] = 1
    flags[25] = 1
    flags[30] = 1

    b = breakdown(flags, labels, case_ids)
    clean_label = ALL_FAULT_CASES[clean].label
    noisy_label = ALL_FAULT_CASES[noisy].label
    assert set(b.cases) == {clean_label, noisy_label}
    assert b.cases[clean_label].count == 10
    assert b.cases[clean_label].detected == 7
    assert b.cases[clean_label].recall == 0.7
    assert b.cases[noisy_label].count == 10
    assert b.cases[noisy_label].detected == 3
    assert b.noise_free_recall == 0.7
    assert b.noisy_recall == pytest.approx(0.3)
    assert b.weighted_recall() == 0.5
    # 10 misses total, 7 of them on the noisy case.
    assert b.noise_fn_fraction == pytest.approx(0.7)


def test_breakdown_without_misses():
    clean, noisy = _clean_and_noisy_ids()
    labels = np.array([1, 1, 1, 0, 0], dtype=np.uint8)
    case_ids = np.array([clean, noisy, noisy, -1, -1], dtype=np.int8)
    flags = np.array([1, 1, 1, 0, 1], dtype=np.uint8)
    b = breakdown(flags, labels, case_ids)
    assert b.noise_fn_fraction == 0.0
    assert b.noise_free_recall == 1.0
    assert b.noisy_recall == 1.0
    assert b.weighted_recall() == 1.0


def test_breakdown_absent_subset_scores_one():
    clean, _ = _clean_and_noisy_ids()
    labels = np.array([1, 1, 0, 0], dtype=np.uint8)
    case_ids = np.array([clean, clean, -1, -1], dtype=np.int8)
    flags = np.zeros(4, dtype=np.uint8)
    b = breakdown(flags, labels, case_ids)
    assert b.noise_free_recall == 0.0
    assert b.noisy_recall == 1.0
    assert b.noise_fn_fraction == 0.0
    assert set(b.cases) == {ALL_FAULT_CASES[clean].label}


def test_breakdown_weighted_recall_matches_score():
    rng = np.random.default_rng(21)
    for _ in range(10):
        labels = rng.integers(0, 2, size=80).astype(np.uint8)
        flags = rng.integers(0, 2, size=80).astype(np.uint8)
        case_ids = np.where(
            labels == 1,
            rng.integers(0, len(ALL_FAULT_CASES), size=80),
            -1,
        ).astype(np.int8)
        b = breakdown(flags, labels, case_ids)
        assert b.weighted_recall() == pytest.approx(score(flags, labels).recall)


def test_breakdown_input_validation():
    labels = np.array([1, 0], dtype=np.uint8)
    flags = np.array([0, 0], dtype=np.uint8)
    with pytest.raises(DataError):
        breakdown(flags, labels, np.array([-1, -1], dtype=np.int8))
    with pytest.raises(DataError):
        breakdown(flags, labels, np.array([0, 0, 0], dtype=np.int8))


def test_eval_sample_indices():
    assert eval_sample_indices(200, 180).tolist() == list(range(179, 200))
    assert eval_sample_indices(200, 180, 10).tolist() == [179, 189, 199]
    got = eval_sample_indices(400, 180, 4)
    assert got[0] == 179
    assert got.size == 56
    assert eval_sample_indices(100, 180).size == 0


def test_outcome_as_dict_layout():
    clean, _ = _clean_and_noisy_ids()
    labels = np.array([1, 1, 0, 0], dtype=np.uint8)
    flags = np.array([1, 0, 0, 1], dtype=np.uint8)
    ids = np.array([clean, clean, -1, -1], dtype=np.int8)
    out = EvalOutcome(SensorKind.IMU, score(flags, labels),
                      breakdown(flags, labels, ids), labels.size)
    d = out.as_dict()
    assert d["sensor"] == "imu"
    assert d["n_evaluated"] == 4
    assert (d["tp"], d["fp"], d["fn"], d["tn"]) == (1, 1, 1, 1)
    assert d["precision"] == 0.5
    assert d["recall"] == 0.5
    case = d["cases"][ALL_FAULT_CASES[clean].label]
    assert case == {"count": 2, "detected": 1, "recall": 0.5}
    assert d["noise_fn_fraction"] == 0.0
    assert d["noise_free_recall"] == 0.5
    assert d["noisy_recall"] == 1.0


def _manual_tree_gather(dataset, kind, scale, indices):
    xs, ys, cs = [], [], []
    for traj in dataset.subset(indices):
        sel = eval_sample_indices(traj.n_samples, WINDOW, STRIDE)
        matrix = tree_feature_matrix(traj.trace(kind), scale)
        xs.append(matrix[sel])
        ys.append(traj.labels(kind)[sel])
        cs.append(traj.case_ids(kind)[sel])
    return np.concatenate(xs), np.concatenate(ys), np.concatenate(cs)


def test_evaluate_tree_matches_manual_gather(trained):
    dataset, tree, _, scale, _ = trained
    out = evaluate_tree(tree, dataset, SensorKind.IMU, scale, WINDOW, STRIDE)
    x, labels, case_ids = _manual_tree_gather(
        dataset, SensorKind.IMU, scale, dataset.test_indices
    )
    _, flags = tree_predict(tree, x)
    assert out.sensor is SensorKind.IMU
    assert out.n_evaluated == labels.size
    assert out.score == score(flags, labels)
    assert out.breakdown == breakdown(flags, labels, case_ids)


def test_evaluate_tree_defaults_to_test_split(trained):
    dataset, tree, _, scale, _ = trained
    default = evaluate_tree(tree, dataset, SensorKind.IMU, scale, WINDOW, STRIDE)
    explicit = evaluate_tree(
        tree, dataset, SensorKind.IMU, scale, WINDOW, STRIDE,
        indices=dataset.test_indices,
    )
    assert default.as_dict() == explicit.as_dict()


def test_evaluate_tree_respects_index_subset(trained):
    dataset, tree, _, scale, _ = trained
    out = evaluate_tree(
        tree, dataset, SensorKind.IMU, scale, WINDOW, STRIDE,
        indices=dataset.train_indices,
    )
    expected = sum(
        eval_sample_indices(t.n_samples, WINDOW, STRIDE).size
        for t in dataset.subset(dataset.train_indices)
    )
    assert out.n_evaluated == expected


def test_evaluate_tree_unit_stride_counts(trained):
    dataset, tree, _, scale, _ = trained
    out = evaluate_tree(tree, dataset, SensorKind.IMU, scale, WINDOW)
    expected = sum(
        t.n_samples - WINDOW + 1 for t in dataset.subset(dataset.test_indices)
    )
    assert out.n_evaluated == expected


def test_evaluate_tree_rejects_foreign_feature_names(trained):
    dataset, _, _, scale, _ = trained
    x = np.array([[0.0, 1.0], [1.0, 0.0], [2.0, 1.0], [3.0, 0.0]])
    y = np.array([0, 0, 1, 1], dtype=np.uint8)
    other = train_tree(x, y, TreeParams(min_child_weight=0.0),
                       feature_names=["a", "b"], trained_on="imu")
    with pytest.raises(DataError):
        evaluate_tree(other, dataset, SensorKind.IMU, scale, WINDOW)


def test_evaluate_tree_window_longer_than_data(trained):
    dataset, tree, _, scale, _ = trained
    with pytest.raises(DataError):
        evaluate_tree(tree, dataset, SensorKind.IMU, scale, 1000)


def test_transfer_matches_accelerometer_evaluation(trained):
    dataset, tree, _, _, acc_scale = trained
    out = transfer_experiment(tree, dataset, acc_scale, WINDOW, STRIDE)
    direct = evaluate_tree(
        tree, dataset, SensorKind.ACCELEROMETER, acc_scale, WINDOW, STRIDE
    )
    assert out.sensor is SensorKind.ACCELEROMETER
    assert out.as_dict() == direct.as_dict()


def test_transfer_requires_imu_trained_model(trained):
    dataset, _, _, _, acc_scale = trained
    xs, ys = [], []
    for traj in dataset.subset(dataset.train_indices):
        xs.append(tree_feature_matrix(traj.accelerometer, acc_scale))
        ys.append(traj.label_accelerometer)
    other = train_tree(
        np.concatenate(xs), np.concatenate(ys), TreeParams(),
        feature_names=tree_feature_names(), trained_on="accelerometer",
    )
    with pytest.raises(DataError, match="transfer"):
        transfer_experiment(other, dataset, acc_scale, WINDOW, STRIDE)


def test_evaluate_cnn_matches_manual_computation(trained):
    dataset, _, cnn, _, _ = trained
    outcomes = evaluate_cnn(cnn, dataset, STRIDE)
    assert set(outcomes) == {SensorKind.IMU, SensorKind.ACCELEROMETER}

    windows = make_windows(dataset, WINDOW, STRIDE, dataset.test_indices)
    probs = predict_batched(cnn, windows.x)
    flags = (probs >= cnn.config.decision_threshold).astype(np.uint8)
    by_index = {traj.index: traj for traj in dataset.trajectories}
    for head, kind in enumerate((SensorKind.IMU, SensorKind.ACCELEROMETER)):
        labels = windows.labels[:, head]
        case_ids = np.array([
            by_index[int(t)].case_ids(kind)[int(end)]
            for t, end in zip(windows.trajectory, windows.end)
        ], dtype=np.int8)
        out = outcomes[kind]
        assert out.sensor is kind
        assert out.n_evaluated == len(windows)
        assert out.score == score(flags[:, head], labels)
        assert out.breakdown == breakdown(flags[:, head], labels, case_ids)


def test_evaluate_cnn_batch_size_does_not_change_results(trained):
    dataset, _, cnn, _, _ = trained
    small = evaluate_cnn(cnn, dataset, STRIDE, batch=32)
    large = evaluate_cnn(cnn, dataset, STRIDE, batch=4096)
    for kind in small:
        assert small[kind].as_dict() == large[kind].as_dict()


def test_evaluate_cnn_threshold_extremes(trained):
    dataset, _, cnn, _, _ = trained
    eager = copy.copy(cnn)
    eager.config = replace(cnn.config, decision_threshold=0.0)
    for out in evaluate_cnn(eager, dataset, STRIDE).values():
        assert out.score.recall == 1.0
        assert out.score.counts.fn == 0

    mute = copy.copy(cnn)
    mute.config = replace(cnn.config, decision_threshold=1.5)
    for out in evaluate_cnn(mute, dataset, STRIDE).values():
        assert out.score.counts.tp == 0
        assert out.score.counts.fp == 0
        assert out.score.precision == 1.0
        assert out.score.recall == 0.0


def test_evaluate_cnn_window_longer_than_data(trained):
    dataset, _, _, _, _ = trained
    huge = init_cnn(replace(CNN_CONFIG, window=1024))
    with pytest.raises(DataError):
        evaluate_cnn(huge, dataset)
