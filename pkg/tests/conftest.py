"""Shared fixtures and small builders for the test suite."""

import numpy as np
import pytest

from stuckwatch.faults import build_dataset, InjectionPolicy
from stuckwatch.rng import Stream
from stuckwatch.telemetry import NUM_CHANNELS, SensorKind, SensorTrace


def flat_trace(kind=SensorKind.IMU, n=400, value=0.0, noise_sigma=0.0,
               nominal=(-1.0, 1.0), rate=10.0) -> SensorTrace:
    """Constant-valued trace, handy as a hand-checkable baseline."""
    return SensorTrace(
        kind=kind,
        sample_rate_hz=rate,
        channels=np.full((NUM_CHANNELS, n), float(value)),
        nominal_range=np.tile(np.asarray(nominal, dtype=float), (NUM_CHANNELS, 1)),
        noise_sigma=noise_sigma,
    )


def wavy_trace(seed=0, kind=SensorKind.IMU, n=400, noise_sigma=0.01,
               nominal=(-1.0, 1.0), rate=10.0) -> SensorTrace:
    """Smooth multi-sine trace with optional white noise, inside the range."""
    stream = Stream(seed)
    t = np.arange(n) / rate
    channels = np.empty((NUM_CHANNELS, n))
    for c in range(NUM_CHANNELS):
        signal = np.zeros(n)
        for _ in range(4):
            amp = 0.05 + 0.1 * stream.uniform()
            freq = 0.02 + 0.2 * stream.uniform()
            phase = 2.0 * np.pi * stream.uniform()
            signal += amp * np.sin(2.0 * np.pi * freq * t + phase)
        channels[c] = signal
    if noise_sigma > 0.0:
        channels += noise_sigma * stream.normals(NUM_CHANNELS * n).reshape(NUM_CHANNELS, n)
    return SensorTrace(
        kind=kind,
        sample_rate_hz=rate,
        channels=channels,
        nominal_range=np.tile(np.asarray(nominal, dtype=float), (NUM_CHANNELS, 1)),
        noise_sigma=noise_sigma,
    )


def trace_pair(seed=0, n=400, noise=(0.01, 0.05)):
    imu = wavy_trace(seed, SensorKind.IMU, n, noise[0])
    acc = wavy_trace(seed + 1000, SensorKind.ACCELEROMETER, n, noise[1],
                     nominal=(-5.0, 5.0))
    return imu, acc


def small_dataset(seed=11, trajectories=8, n=400, min_gap=60,
                  duration_range=(30, 120), train_fraction=0.8):
    """Labelled dataset small enough for per-test training."""
    policy = InjectionPolicy(
        seed=seed,
        faults_per_trajectory=(1, 3),
        duration_range=duration_range,
        target_fault_fraction=0.5,
        min_gap=min_gap,
    )
    pairs = [trace_pair(seed + 17 * i, n=n) for i in range(trajectories)]
    return build_dataset(policy, pairs, train_fraction)


def tiny_config() -> dict:
    """Config dict for fast CLI runs: 6 short trajectories, slim network."""
    return {
        "seed": 4242,
        "trajectories": 6,
        "simulation": {"duration_s": 40.0},
        "injection": {"duration_range": [50, 300]},
        "network": {
            "stage1": [7, 8, 2],
            "stage2": [5, 8, 2],
            "merge": [3, 8, 2],
            "epochs": 2,
        },
    }


@pytest.fixture
def tiny_config_dict():
    return tiny_config()


def brute_force_candidates(x, g, h, reg_lambda, gamma, min_child_weight):
    """Every admissible (gain, feature, threshold) split of (x, g, h).

    Mirrors the stated contract rather than the implementation: thresholds
    sit halfway between consecutive distinct sorted values (bumped to the
    upper value if the midpoint rounds down onto the lower), children must
    carry min_child_weight hessian mass, and the gain is the exact
    objective reduction minus gamma.
    """
    n, d = x.shape
    G, H = g.sum(), h.sum()
    parent = -0.5 * G * G / (H + reg_lambda)
    out = []
    for j in range(d):
        values = np.unique(x[:, j])
        for lo, hi in zip(values, values[1:]):
            thr = (lo + hi) / 2.0
            if thr <= lo:
                thr = hi
            left = x[:, j] < thr
            hl, hr = h[left].sum(), h[~left].sum()
            if hl < min_child_weight or hr < min_child_weight:
                continue
            gl, gr = g[left].sum(), g[~left].sum()
            child = (-0.5 * gl * gl / (hl + reg_lambda)
                     - 0.5 * gr * gr / (hr + reg_lambda))
            gain = parent - child - gamma
            if gain > 1e-10:
                out.append((float(gain), j, float(thr)))
    return out


def assert_split_is_optimal(choice, x, g, h, reg_lambda, gamma, min_child_weight):
    """The chosen split must realize the brute-force maximum gain.

    Feature and threshold must match outright whenever the maximum is
    unique; on exact gain ties any maximizing candidate is acceptable
    because cross-feature ordering under ties is not part of the contract.
    """
    candidates = brute_force_candidates(x, g, h, reg_lambda, gamma, min_child_weight)
    if not candidates:
        assert choice is None, f"split {choice} found where oracle sees no gain"
        return
    assert choice is not None, "no split found where oracle sees positive gain"
    best_gain = max(c[0] for c in candidates)
    tol = 1e-9 * max(1.0, abs(best_gain))
    winners = [c for c in candidates if c[0] >= best_gain - tol]
    assert any(
        c[1] == choice.feature and abs(c[2] - choice.threshold) <= 1e-9 * max(1.0, abs(c[2]))
        for c in winners
    ), f"split {choice} is not among the maximal candidates {winners}"
    if len(winners) == 1:
        gain, feature, threshold = winners[0]
        assert choice.feature == feature
        assert abs(choice.threshold - threshold) <= 1e-9 * max(1.0, abs(threshold))
        assert abs(choice.gain - gain) <= 1e-7 * max(1.0, abs(gain))
