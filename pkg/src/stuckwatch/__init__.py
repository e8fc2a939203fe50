"""Stuck-value fault detection study toolkit.

Simulates multi-channel IMU and accelerometer telemetry, injects stuck-value
faults under a seeded policy, and trains two detectors over the result: a
single shallow gradient-boosted decision tree on engineered per-sample
features and a small two-branch convolutional network on raw windows. The
evaluation utilities score both on the same sample index set and support the
cross-sensor transfer experiment for the tree.
"""

from .config import RunConfig, load_run_config, run_config_from_dict
from .errors import DataError, PolicyError, StuckwatchError, TrainingError, UsageError
from .faults import (
    ALL_FAULT_CASES,
    FaultCase,
    FaultKind,
    FaultSpec,
    InjectionPolicy,
    LabeledDataset,
    Trajectory,
    build_dataset,
    inject_fault,
    load_dataset,
    save_dataset,
)
from .features import (
    DEFAULT_WINDOW,
    derivative,
    derivative_scale,
    extract_features,
    make_windows,
    tree_feature_matrix,
)
from .rng import Stream, derive_seed
from .telemetry import (
    SensorBands,
    SensorKind,
    SensorTrace,
    TrajectoryConfig,
    add_measurement_noise,
    generate_trajectory,
)
from .tree import TreeModel, TreeParams, export_rules, load_tree, predict, save_tree, train_tree
from .cnn import CnnConfig, CnnModel, init_cnn, load_cnn, predict_window, save_cnn, train_cnn
from .evaluation import evaluate_cnn, evaluate_tree, score, transfer_experiment
from .pipeline import (
    calibration_scale,
    evaluate_cnn_model,
    evaluate_tree_model,
    generate_dataset,
    train_cnn_model,
    train_tree_model,
)

__version__ = "0.1.0"

__all__ = [
    "ALL_FAULT_CASES",
    "CnnConfig",
    "CnnModel",
    "DataError",
    "DEFAULT_WINDOW",
    "FaultCase",
    "FaultKind",
    "FaultSpec",
    "InjectionPolicy",
    "LabeledDataset",
    "PolicyError",
    "RunConfig",
    "SensorBands",
    "SensorKind",
    "SensorTrace",
    "Stream",
    "StuckwatchError",
    "Trajectory",
    "TrajectoryConfig",
    "TrainingError",
    "TreeModel",
    "TreeParams",
    "UsageError",
    "add_measurement_noise",
    "build_dataset",
    "calibration_scale",
    "derivative",
    "derivative_scale",
    "derive_seed",
    "evaluate_cnn",
    "evaluate_cnn_model",
    "evaluate_tree",
    "evaluate_tree_model",
    "export_rules",
    "extract_features",
    "generate_dataset",
    "generate_trajectory",
    "init_cnn",
    "inject_fault",
    "load_cnn",
    "load_dataset",
    "load_run_config",
    "load_tree",
    "make_windows",
    "predict",
    "predict_window",
    "run_config_from_dict",
    "save_cnn",
    "save_dataset",
    "save_tree",
    "score",
    "train_cnn",
    "train_cnn_model",
    "train_tree",
    "train_tree_model",
    "transfer_experiment",
    "tree_feature_matrix",
    "__version__",
]
