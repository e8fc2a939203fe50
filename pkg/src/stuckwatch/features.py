"""Signal features and windowing for the two detector families.

The tree classifier consumes one feature row per sample; the network
consumes fixed-length windows of all six channels.  Everything here is
causal: a sample's features depend only on samples at or before it, so both
detectors could run on a live stream.

Tree feature row (13 columns, names from :func:`tree_feature_names`):
per channel the normalised value ((v - mid) / half-range), the signed
derivative in units of the sensor's typical nominal derivative, the
unsigned peak score |derivative| / scale, and a strict out-of-range flag;
plus the minimum over channels of the trailing variance of the normalised
value over the last 16 samples.  Normalised units keep thresholds learned
on one sensor meaningful on the other.
"""

from __future__ import annotations

import csv

import numpy as np

from .errors import DataError
from .faults import LabeledDataset
from .telemetry import NUM_CHANNELS, SensorTrace

DEFAULT_WINDOW = 180
DEFAULT_FLATNESS_WINDOW = 16
TRAIN_STRIDE = 4
EVAL_STRIDE = 1

_CHANNEL_FEATURES = ("value", "deriv", "peak", "out_of_range")


def derivative(channel: np.ndarray, sample_rate_hz: float) -> np.ndarray:
    """Backward-difference derivative in units/s; index 0 is defined as 0."""
    channel = np.asarray(channel, dtype=np.float64)
    if channel.ndim != 1 or channel.size < 1:
        raise ValueError("channel must be a non-empty 1-D array")
    if sample_rate_hz <= 0:
        raise ValueError("sample_rate_hz must be > 0")
    out = np.empty_like(channel)
    out[0] = 0.0
    out[1:] = (channel[1:] - channel[:-1]) * sample_rate_hz
    return out


def derivative_scale(calibration: SensorTrace) -> float:
    """Median |derivative| of a nominal trace, pooled over channels.

    The artificial zero at index 0 is excluded.  Raises if the scale is not
    strictly positive (a constant calibration trace cannot normalise
    anything).
    """
    if calibration.n_samples < 2:
        raise DataError("calibration trace needs at least two samples")
    mags = [
        np.abs(derivative(calibration.channels[c], calibration.sample_rate_hz)[1:])
        for c in range(NUM_CHANNELS)
    ]
    scale = float(np.median(np.concatenate(mags)))
    if scale <= 0.0:
        raise DataError("calibration trace has zero derivative scale")
    return scale


def frame_feature_names() -> list[str]:
    return [f"ch{c}_{name}" for c in range(NUM_CHANNELS) for name in _CHANNEL_FEATURES]


def tree_feature_names() -> list[str]:
    return frame_feature_names() + ["flatness"]


def extract_features(trace: SensorTrace, deriv_scale: float) -> np.ndarray:
    """Per-sample feature frames in raw units, shape (n, 12).

    Columns follow :func:`frame_feature_names`: per channel the raw value,
    the raw backward-difference derivative, peak score |derivative| /
    ``deriv_scale``, and the strict out-of-range flag.
    """
    if deriv_scale <= 0.0:
        raise DataError("deriv_scale must be > 0")
    n = trace.n_samples
    out = np.empty((n, NUM_CHANNELS * len(_CHANNEL_FEATURES)), dtype=np.float64)
    for c in range(NUM_CHANNELS):
        values = trace.channels[c]
        deriv = derivative(values, trace.sample_rate_hz)
        lo, hi = trace.nominal_range[c]
        base = c * len(_CHANNEL_FEATURES)
        out[:, base + 0] = values
        out[:, base + 1] = deriv
        out[:, base + 2] = np.abs(deriv) / deriv_scale
        out[:, base + 3] = ((values < lo) | (values > hi)).astype(np.float64)
    return out


def trailing_min_variance(trace: SensorTrace, window: int = DEFAULT_FLATNESS_WINDOW) -> np.ndarray:
    """Min over channels of the trailing variance of the normalised value.

    The window covers the ``window`` most recent samples including the
    current one; before that many samples exist the prefix is used.  A
    channel stuck at an exactly constant level yields exactly 0.
    """
    if window < 2:
        raise ValueError("flatness window must be >= 2")
    n = trace.n_samples
    norm = (trace.channels - trace.range_mid[:, None]) / trace.range_half[:, None]
    per_channel = np.empty((NUM_CHANNELS, n), dtype=np.float64)
    head = min(window - 1, n)
    for t in range(head):
        per_channel[:, t] = norm[:, : t + 1].var(axis=1)
    if n >= window:
        sliding = np.lib.stride_tricks.sliding_window_view(norm, window, axis=1)
        per_channel[:, window - 1:] = sliding.var(axis=-1)
    return per_channel.min(axis=0)


def tree_feature_matrix(
    trace: SensorTrace,
    deriv_scale: float,
    flatness_window: int = DEFAULT_FLATNESS_WINDOW,
) -> np.ndarray:
    """Per-sample tree features, shape (n, 13); see the module docstring."""
    if deriv_scale <= 0.0:
        raise DataError("deriv_scale must be > 0")
    n = trace.n_samples
    mid, half = trace.range_mid, trace.range_half
    out = np.empty((n, len(tree_feature_names())), dtype=np.float64)
    for c in range(NUM_CHANNELS):
        values = trace.channels[c]
        deriv = derivative(values, trace.sample_rate_hz)
        lo, hi = trace.nominal_range[c]
        base = c * len(_CHANNEL_FEATURES)
        out[:, base + 0] = (values - mid[c]) / half[c]
        out[:, base + 1] = deriv / deriv_scale
        out[:, base + 2] = np.abs(deriv) / deriv_scale
        out[:, base + 3] = ((values < lo) | (values > hi)).astype(np.float64)
    out[:, -1] = trailing_min_variance(trace, flatness_window)
    return out


def write_feature_csv(path, trace: SensorTrace, deriv_scale: float,
                      flatness_window: int = DEFAULT_FLATNESS_WINDOW) -> None:
    """Write the tree feature matrix with a time column at 9 significant digits."""
    matrix = tree_feature_matrix(trace, deriv_scale, flatness_window)
    times = trace.times()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + tree_feature_names())
        for i in range(trace.n_samples):
            writer.writerow([f"{times[i]:.6f}"] + [f"{v:.8e}" for v in matrix[i]])


def window_count(n_samples: int, window: int, stride: int) -> int:
    if n_samples < window:
        return 0
    return (n_samples - window) // stride + 1


def normalize_window_channels(trace: SensorTrace) -> np.ndarray:
    """(channels - range mid) / half-range, shape (3, n)."""
    return (trace.channels - trace.range_mid[:, None]) / trace.range_half[:, None]


def condition_window_channels(trace: SensorTrace) -> np.ndarray:
    """First differences scaled so the sensor's own noise has unit spread.

    Differencing removes the operating level and the slow flight profile,
    which otherwise lets a detector key on where in a specific trajectory a
    window sits instead of on the fault signature.  After scaling, a
    noise-free stuck axis is exactly zero, a stuck-with-noise axis is unit
    white noise on either sensor, and nominal motion keeps its slope
    visible at the sensor's true signal-to-noise ratio.  A noiseless trace
    falls back to plain normalized differences.
    """
    values = normalize_window_channels(trace)
    d = np.diff(values, axis=1, prepend=values[:, :1])
    sigma = trace.noise_sigma / trace.range_half
    denom = np.where(sigma > 0.0, sigma * np.sqrt(2.0), 1.0)
    return d / denom[:, None]


class Windows:
    """Fixed-length windows over both sensors of a dataset subset.

    ``x`` has shape (m, 6, window) with IMU channels first; ``labels`` has
    shape (m, 2) holding the final sample's (IMU, accelerometer) flags;
    ``trajectory`` and ``end`` locate each window (``end`` is the index of
    its final sample).
    """

    def __init__(self, x: np.ndarray, labels: np.ndarray,
                 trajectory: np.ndarray, end: np.ndarray, window: int):
        self.x = x
        self.labels = labels
        self.trajectory = trajectory
        self.end = end
        self.window = window

    def __len__(self) -> int:
        return self.x.shape[0]


def make_windows(
    dataset: LabeledDataset,
    window: int = DEFAULT_WINDOW,
    stride: int = EVAL_STRIDE,
    indices=None,
    condition: bool = True,
) -> Windows:
    """Cut aligned windows from the listed trajectories (all by default).

    Windows never span trajectory boundaries.  Each trajectory of length n
    yields (n - window) // stride + 1 windows starting at multiples of the
    stride; the label pair is taken at the window's final sample.

    ``condition`` runs each trace through ``condition_window_channels``;
    when disabled the windows hold range-normalized values instead.
    """
    if window < 2:
        raise ValueError("window must be >= 2")
    if not (1 <= stride <= window):
        raise ValueError("stride must lie in [1, window]")
    chosen = dataset.trajectories if indices is None else [dataset.trajectories[i] for i in indices]
    xs, ys, traj_ids, ends = [], [], [], []
    for traj in chosen:
        n = traj.n_samples
        count = window_count(n, window, stride)
        if count == 0:
            continue
        prep = condition_window_channels if condition else normalize_window_channels
        combined = np.vstack([prep(traj.imu), prep(traj.accelerometer)])
        sliding = np.lib.stride_tricks.sliding_window_view(combined, window, axis=1)
        starts = np.arange(count) * stride
        xs.append(sliding[:, starts, :].transpose(1, 0, 2).copy())
        final = starts + window - 1
        ys.append(
            np.stack([traj.label_imu[final], traj.label_accelerometer[final]], axis=1)
        )
        traj_ids.append(np.full(count, traj.index, dtype=np.int64))
        ends.append(final.astype(np.int64))
    if xs:
        x = np.concatenate(xs)
        labels = np.concatenate(ys).astype(np.uint8)
        trajectory = np.concatenate(traj_ids)
        end = np.concatenate(ends)
    else:
        x = np.empty((0, 2 * NUM_CHANNELS, window))
        labels = np.empty((0, 2), dtype=np.uint8)
        trajectory = np.empty(0, dtype=np.int64)
        end = np.empty(0, dtype=np.int64)
    return Windows(x, labels, trajectory, end, window)
