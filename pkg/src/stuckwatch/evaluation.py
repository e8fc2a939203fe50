"""Scoring, per-fault-case breakdowns, and the cross-sensor transfer check.

Both detector families are scored on the same per-sample index set: the
final samples of all length-``window`` windows at the evaluation stride.
That removes the warm-up asymmetry (the network cannot emit anything before
one full window of history; the tree features need the same history for
their trailing statistics to settle).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cnn import CnnModel, predict_batched
from .errors import DataError
from .faults import ALL_FAULT_CASES, LabeledDataset
from .features import make_windows, tree_feature_matrix, tree_feature_names
from .telemetry import SensorKind
from .tree import TreeModel, predict as tree_predict


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class Score:
    counts: ConfusionCounts
    precision: float
    recall: float


def score(predictions: np.ndarray, labels: np.ndarray) -> Score:
    """Confusion counts plus precision/recall over binary sequences.

    An empty denominator scores 1.0: no predicted positives means nothing
    was falsely flagged, no actual positives means nothing was missed.
    """
    predictions = np.asarray(predictions).astype(bool)
    labels = np.asarray(labels).astype(bool)
    if predictions.shape != labels.shape or predictions.ndim != 1 or predictions.size == 0:
        raise DataError(
            f"predictions {predictions.shape} and labels {labels.shape} must be equal-length, non-empty"
        )
    tp = int((predictions & labels).sum())
    fp = int((predictions & ~labels).sum())
    fn = int((~predictions & labels).sum())
    tn = int((~predictions & ~labels).sum())
    precision = tp / (tp + fp) if (tp + fp) > 0 else 1.0
    recall = tp / (tp + fn) if (tp + fn) > 0 else 1.0
    return Score(ConfusionCounts(tp, fp, fn, tn), precision, recall)


@dataclass(frozen=True)
class CaseStats:
    count: int
    detected: int

    @property
    def recall(self) -> float:
        return self.detected / self.count if self.count else 1.0


@dataclass(frozen=True)
class CaseBreakdown:
    """Recall by fault combination plus noise-related aggregates.

    ``noise_fn_fraction`` is the share of missed faulty samples whose fault
    keeps noise on top of the held value (0.0 when nothing was missed);
    ``noise_free_recall`` is recall restricted to faults without it.
    """

    cases: dict[str, CaseStats]
    noise_fn_fraction: float
    noise_free_recall: float
    noisy_recall: float

    def weighted_recall(self) -> float:
        count = sum(s.count for s in self.cases.values())
        detected = sum(s.detected for s in self.cases.values())
        return detected / count if count else 1.0


def breakdown(predictions: np.ndarray, labels: np.ndarray,
              case_ids: np.ndarray) -> CaseBreakdown:
    """Per-case detection stats; ``case_ids`` indexes ALL_FAULT_CASES, -1 nominal."""
    predictions = np.asarray(predictions).astype(bool)
    labels = np.asarray(labels).astype(bool)
    case_ids = np.asarray(case_ids)
    if not (predictions.shape == labels.shape == case_ids.shape):
        raise DataError("predictions, labels and case_ids must share a shape")
    if bool((labels & (case_ids < 0)).any()):
        raise DataError("faulty sample without fault metadata")

    cases: dict[str, CaseStats] = {}
    for i, case in enumerate(ALL_FAULT_CASES):
        mask = labels & (case_ids == i)
        count = int(mask.sum())
        if count == 0:
            continue
        cases[case.label] = CaseStats(count, int((mask & predictions).sum()))

    fn_mask = labels & ~predictions
    if fn_mask.any():
        noisy_lookup = np.array([case.noisy for case in ALL_FAULT_CASES])
        noise_fn = float(noisy_lookup[case_ids[fn_mask]].mean())
    else:
        noise_fn = 0.0

    def _subset_recall(noisy: bool) -> float:
        ids = [i for i, case in enumerate(ALL_FAULT_CASES) if case.noisy == noisy]
        mask = labels & np.isin(case_ids, ids)
        total = int(mask.sum())
        return (int((mask & predictions).sum()) / total) if total else 1.0

    return CaseBreakdown(cases, noise_fn, _subset_recall(False), _subset_recall(True))


def eval_sample_indices(n_samples: int, window: int, stride: int = 1) -> np.ndarray:
    """Indices of window-final samples: window-1, window-1+stride, ..."""
    if n_samples < window:
        return np.empty(0, dtype=np.int64)
    return np.arange(window - 1, n_samples, stride, dtype=np.int64)


@dataclass
class EvalOutcome:
    sensor: SensorKind
    score: Score
    breakdown: CaseBreakdown
    n_evaluated: int

    def as_dict(self) -> dict:
        return {
            "sensor": self.sensor.value,
            "n_evaluated": self.n_evaluated,
            "tp": self.score.counts.tp,
            "fp": self.score.counts.fp,
            "fn": self.score.counts.fn,
            "tn": self.score.counts.tn,
            "precision": self.score.precision,
            "recall": self.score.recall,
            "cases": {
                label: {"count": s.count, "detected": s.detected, "recall": s.recall}
                for label, s in sorted(self.breakdown.cases.items())
            },
            "noise_fn_fraction": self.breakdown.noise_fn_fraction,
            "noise_free_recall": self.breakdown.noise_free_recall,
            "noisy_recall": self.breakdown.noisy_recall,
        }


def _gather_tree_inputs(dataset: LabeledDataset, kind: SensorKind, deriv_scale: float,
                        window: int, stride: int, indices, flatness_window: int):
    xs, ys, cs = [], [], []
    for traj in dataset.subset(indices):
        sel = eval_sample_indices(traj.n_samples, window, stride)
        if sel.size == 0:
            continue
        matrix = tree_feature_matrix(traj.trace(kind), deriv_scale, flatness_window)
        xs.append(matrix[sel])
        ys.append(traj.labels(kind)[sel])
        cs.append(traj.case_ids(kind)[sel])
    if not xs:
        raise DataError("no evaluable samples: trajectories shorter than the window")
    return np.concatenate(xs), np.concatenate(ys), np.concatenate(cs)


def evaluate_tree(
    model: TreeModel,
    dataset: LabeledDataset,
    kind: SensorKind,
    deriv_scale: float,
    window: int,
    stride: int = 1,
    indices=None,
    flatness_window: int = 16,
) -> EvalOutcome:
    """Score the tree per sample on the window-final index set of ``kind``."""
    if model.feature_names != tree_feature_names():
        raise DataError("tree model feature names do not match this feature extractor")
    if indices is None:
        indices = dataset.test_indices
    x, labels, case_ids = _gather_tree_inputs(
        dataset, kind, deriv_scale, window, stride, indices, flatness_window
    )
    _, flags = tree_predict(model, x)
    return EvalOutcome(kind, score(flags, labels), breakdown(flags, labels, case_ids), labels.size)


def transfer_experiment(
    model: TreeModel,
    dataset: LabeledDataset,
    accel_deriv_scale: float,
    window: int,
    stride: int = 1,
    indices=None,
    flatness_window: int = 16,
) -> EvalOutcome:
    """Apply an IMU-trained tree, unchanged, to accelerometer features.

    The features are computed with the accelerometer's own calibration
    scale and nominal range, so only genuinely scale-free structure can
    carry over.
    """
    if model.trained_on != SensorKind.IMU.value:
        raise DataError(
            f"transfer expects a tree trained on IMU features, got {model.trained_on!r}"
        )
    return evaluate_tree(
        model, dataset, SensorKind.ACCELEROMETER, accel_deriv_scale,
        window, stride, indices, flatness_window,
    )


def evaluate_cnn(
    model: CnnModel,
    dataset: LabeledDataset,
    stride: int = 1,
    indices=None,
    batch: int = 512,
) -> dict[SensorKind, EvalOutcome]:
    """Score both network heads on windows at the evaluation stride."""
    if indices is None:
        indices = dataset.test_indices
    windows = make_windows(dataset, model.config.window, stride, indices)
    if len(windows) == 0:
        raise DataError("no evaluable windows: trajectories shorter than the window")
    probs = predict_batched(model, windows.x, batch)
    flags = (probs >= model.config.decision_threshold).astype(np.uint8)

    by_traj = {traj.index: traj for traj in dataset.trajectories}
    outcomes: dict[SensorKind, EvalOutcome] = {}
    for head, kind in enumerate((SensorKind.IMU, SensorKind.ACCELEROMETER)):
        case_ids = np.empty(len(windows), dtype=np.int8)
        for t in np.unique(windows.trajectory):
            mask = windows.trajectory == t
            case_ids[mask] = by_traj[int(t)].case_ids(kind)[windows.end[mask]]
        labels = windows.labels[:, head]
        outcomes[kind] = EvalOutcome(
            kind,
            score(flags[:, head], labels),
            breakdown(flags[:, head], labels, case_ids),
            labels.size,
        )
    return outcomes
