"""End-to-end study steps shared by the CLI and the test suite.

All randomness derives from ``RunConfig.seed`` through labelled sub-seeds,
so a whole generate/train/evaluate run is reproducible bit-for-bit from the
one number.
"""

from __future__ import annotations

import numpy as np

from .config import RunConfig
from .errors import TrainingError
from .evaluation import EvalOutcome, evaluate_cnn, evaluate_tree, transfer_experiment
from .faults import LabeledDataset, build_dataset
from .features import make_windows, tree_feature_matrix, tree_feature_names
from .cnn import CnnModel, init_cnn, train_cnn
from .rng import derive_seed
from .telemetry import SensorKind, add_measurement_noise, generate_trajectory
from .tree import TreeModel, train_tree


def generate_dataset(config: RunConfig) -> LabeledDataset:
    """Simulate, add measurement noise, inject faults, split by trajectory."""
    config.validate()
    pairs = []
    for i in range(config.trajectories):
        cfg = config.trajectory_config(derive_seed(config.seed, "trajectory", i))
        traces = {}
        for kind in SensorKind:
            base = generate_trajectory(cfg, kind)
            traces[kind] = add_measurement_noise(
                base, derive_seed(config.seed, "noise", i, kind.value)
            )
        pairs.append((traces[SensorKind.IMU], traces[SensorKind.ACCELEROMETER]))
    return build_dataset(config.injection_policy(), pairs, config.train_fraction)


def calibration_scale(config: RunConfig, kind: SensorKind) -> float:
    """Derivative scale from one dedicated nominal noisy trace of ``kind``."""
    from .features import derivative_scale

    cfg = config.trajectory_config(derive_seed(config.seed, "calibration"))
    base = generate_trajectory(cfg, kind)
    noisy = add_measurement_noise(
        base, derive_seed(config.seed, "calibration-noise", kind.value)
    )
    return derivative_scale(noisy)


def train_tree_model(config: RunConfig, dataset: LabeledDataset) -> TreeModel:
    """Fit the tree on every training-trajectory IMU sample."""
    scale = calibration_scale(config, SensorKind.IMU)
    xs, ys = [], []
    for traj in dataset.subset(dataset.train_indices):
        xs.append(
            tree_feature_matrix(traj.imu, scale, config.features.flatness_window)
        )
        ys.append(traj.label_imu)
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    return train_tree(
        x, y, config.tree, tree_feature_names(), trained_on=SensorKind.IMU.value
    )


def train_cnn_model(config: RunConfig, dataset: LabeledDataset,
                    log=None) -> tuple[CnnModel, list[float]]:
    """Initialise and train the network on training-trajectory windows."""
    windows = make_windows(
        dataset,
        config.features.window,
        config.features.train_stride,
        dataset.train_indices,
    )
    if len(windows) == 0:
        raise TrainingError("no training windows: trajectories shorter than the window")
    model = init_cnn(config.cnn_config())
    return train_cnn(model, windows.x, windows.labels, log=log)


def evaluate_tree_model(config: RunConfig, model: TreeModel, dataset: LabeledDataset,
                        stride: int | None = None,
                        transfer: bool = False) -> dict[SensorKind, EvalOutcome]:
    stride = stride or config.features.eval_stride
    if transfer:
        scale = calibration_scale(config, SensorKind.ACCELEROMETER)
        outcome = transfer_experiment(
            model, dataset, scale, config.features.window, stride,
            flatness_window=config.features.flatness_window,
        )
        return {SensorKind.ACCELEROMETER: outcome}
    scale = calibration_scale(config, SensorKind.IMU)
    outcome = evaluate_tree(
        model, dataset, SensorKind.IMU, scale, config.features.window, stride,
        flatness_window=config.features.flatness_window,
    )
    return {SensorKind.IMU: outcome}


def evaluate_cnn_model(config: RunConfig, model: CnnModel, dataset: LabeledDataset,
                       stride: int | None = None) -> dict[SensorKind, EvalOutcome]:
    return evaluate_cnn(model, dataset, stride or config.features.eval_stride)


def tree_flag_series(config: RunConfig, model: TreeModel, dataset: LabeledDataset,
                     position: int, kind: SensorKind) -> np.ndarray:
    """Per-sample tree flags for the trajectory at list position ``position``."""
    from .tree import predict

    scale = calibration_scale(config, kind)
    traj = dataset.trajectories[position]
    x = tree_feature_matrix(traj.trace(kind), scale, config.features.flatness_window)
    _, flags = predict(model, x)
    return flags.astype(np.uint8)


def cnn_flag_series(config: RunConfig, model: CnnModel, dataset: LabeledDataset,
                    position: int) -> dict[SensorKind, np.ndarray]:
    """Per-sample network flags for one trajectory; zeros before one window."""
    from .cnn import predict_batched

    traj = dataset.trajectories[position]
    windows = make_windows(dataset, model.config.window, 1, [position])
    probs = predict_batched(model, windows.x)
    flags = (probs >= model.config.decision_threshold).astype(np.uint8)
    out = {}
    for head, kind in enumerate((SensorKind.IMU, SensorKind.ACCELEROMETER)):
        series = np.zeros(traj.n_samples, dtype=np.uint8)
        series[windows.end] = flags[:, head]
        out[kind] = series
    return out
