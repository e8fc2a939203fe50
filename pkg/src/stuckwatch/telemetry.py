"""Synthetic three-axis sensor telemetry.

Two sensor kinds are modelled: an inertial measurement unit (angular rate,
rad/s) and an accelerometer (specific force, m/s^2).  A nominal trajectory
is a per-channel sum of seeded sinusoids plus a constant bias, kept inside
the channel's nominal range by construction; measurement noise is added
separately so the noise-free base stays available for fault bookkeeping.
The accelerometer is configured noticeably noisier than the IMU, which is
what makes the two sensors interesting to compare downstream.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .errors import UsageError
from .rng import Stream, derive_seed

# Fraction of the half-range available to bias plus mode amplitudes; the
# remaining margin keeps noisy samples mostly inside the nominal range.
_AMPLITUDE_MARGIN = 0.95

NUM_CHANNELS = 3


class SensorKind(Enum):
    IMU = "imu"
    ACCELEROMETER = "accelerometer"


@dataclass(frozen=True)
class SensorBands:
    """Per-sensor-kind generation bands, all in the sensor's own units.

    ``bias`` is an offset from the midpoint of ``nominal_range``; every mode
    amplitude is drawn from ``amplitude`` and the set is rescaled if the
    worst-case sum would leave the nominal range.
    """

    nominal_range: tuple[float, float]
    noise_sigma: float
    amplitude: tuple[float, float]
    frequency: tuple[float, float]
    bias: tuple[float, float]

    def validate(self) -> None:
        lo, hi = self.nominal_range
        if not (lo < hi):
            raise UsageError(f"nominal_range must satisfy low < high, got {self.nominal_range}")
        if self.noise_sigma < 0:
            raise UsageError("noise_sigma must be >= 0")
        for name in ("amplitude", "frequency", "bias"):
            a, b = getattr(self, name)
            if b < a:
                raise UsageError(f"empty {name} interval [{a}, {b}]")
        if self.amplitude[0] < 0 or self.frequency[0] < 0:
            raise UsageError("amplitude and frequency bands must be non-negative")
        half = 0.5 * (hi - lo)
        if max(abs(self.bias[0]), abs(self.bias[1])) >= _AMPLITUDE_MARGIN * half:
            raise UsageError("bias band must stay inside the nominal range margin")


def default_imu_bands() -> SensorBands:
    return SensorBands(
        nominal_range=(-0.25, 0.25),
        noise_sigma=0.00125,  # 0.5% of the half-range
        amplitude=(0.02, 0.09),
        # Slow enough that quiet dwells span several samples, fast enough
        # that every detection window still sees surrounding motion.
        frequency=(0.02, 0.1),
        bias=(-0.075, 0.075),
    )


def default_accelerometer_bands() -> SensorBands:
    return SensorBands(
        nominal_range=(-5.0, 5.0),
        noise_sigma=0.15,  # 3% of the half-range
        amplitude=(0.4, 1.8),
        frequency=(0.02, 0.3),
        bias=(-1.5, 1.5),
    )


@dataclass(frozen=True)
class TrajectoryConfig:
    """Knobs for one simulated trajectory (both sensor kinds)."""

    seed: int
    duration_s: float = 200.0
    sample_rate_hz: float = 10.0
    num_modes: int = 6
    imu: SensorBands = field(default_factory=default_imu_bands)
    accelerometer: SensorBands = field(default_factory=default_accelerometer_bands)
    min_samples: int = 180  # one detector window

    def bands(self, kind: SensorKind) -> SensorBands:
        return self.imu if kind is SensorKind.IMU else self.accelerometer

    @property
    def num_samples(self) -> int:
        return int(math.floor(self.duration_s * self.sample_rate_hz))

    def validate(self) -> None:
        if self.sample_rate_hz <= 0:
            raise UsageError("sample_rate_hz must be > 0")
        if self.num_modes < 0:
            raise UsageError("num_modes must be >= 0")
        if self.num_samples < self.min_samples:
            raise UsageError(
                f"duration {self.duration_s}s at {self.sample_rate_hz}Hz yields "
                f"{self.num_samples} samples, fewer than the minimum {self.min_samples}"
            )
        self.imu.validate()
        self.accelerometer.validate()


@dataclass
class SensorTrace:
    """A three-channel time series from one sensor.

    channels has shape (3, n); nominal_range has shape (3, 2) with
    low < high per channel.
    """

    kind: SensorKind
    sample_rate_hz: float
    channels: np.ndarray
    nominal_range: np.ndarray
    noise_sigma: float

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.float64)
        self.nominal_range = np.asarray(self.nominal_range, dtype=np.float64)
        if self.channels.ndim != 2 or self.channels.shape[0] != NUM_CHANNELS:
            raise ValueError(f"channels must have shape (3, n), got {self.channels.shape}")
        if self.channels.shape[1] < 1:
            raise ValueError("trace must contain at least one sample")
        if self.nominal_range.shape != (NUM_CHANNELS, 2):
            raise ValueError("nominal_range must have shape (3, 2)")
        if not np.all(self.nominal_range[:, 0] < self.nominal_range[:, 1]):
            raise ValueError("nominal_range rows must satisfy low < high")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be > 0")

    @property
    def n_samples(self) -> int:
        return self.channels.shape[1]

    @property
    def range_mid(self) -> np.ndarray:
        return 0.5 * (self.nominal_range[:, 0] + self.nominal_range[:, 1])

    @property
    def range_half(self) -> np.ndarray:
        return 0.5 * (self.nominal_range[:, 1] - self.nominal_range[:, 0])

    def times(self) -> np.ndarray:
        return np.arange(self.n_samples, dtype=np.float64) / self.sample_rate_hz


def generate_trajectory(cfg: TrajectoryConfig, kind: SensorKind) -> SensorTrace:
    """Simulate one noise-free trajectory for ``kind``.

    Per channel: draw a bias, then ``num_modes`` sinusoid modes (amplitude,
    frequency, phase, in that order).  If the bias plus the worst-case mode
    sum would leave the nominal range, all amplitudes are scaled down to fit
    within the margin.  Deterministic in (cfg.seed, cfg, kind).
    """
    cfg.validate()
    bands = cfg.bands(kind)
    n = cfg.num_samples
    lo, hi = bands.nominal_range
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    stream = Stream(derive_seed(cfg.seed, "trajectory", kind.value))
    t = np.arange(n, dtype=np.float64) / cfg.sample_rate_hz

    channels = np.empty((NUM_CHANNELS, n), dtype=np.float64)
    for c in range(NUM_CHANNELS):
        b_lo, b_hi = bands.bias
        bias = b_lo + stream.uniform() * (b_hi - b_lo)
        amps = np.empty(cfg.num_modes)
        freqs = np.empty(cfg.num_modes)
        phases = np.empty(cfg.num_modes)
        for m in range(cfg.num_modes):
            amps[m] = bands.amplitude[0] + stream.uniform() * (bands.amplitude[1] - bands.amplitude[0])
            freqs[m] = bands.frequency[0] + stream.uniform() * (bands.frequency[1] - bands.frequency[0])
            phases[m] = stream.uniform() * 2.0 * np.pi
        headroom = _AMPLITUDE_MARGIN * half - abs(bias)
        envelope = float(amps.sum())
        if envelope > headroom and envelope > 0.0:
            amps *= headroom / envelope
        signal = np.full(n, mid + bias)
        for m in range(cfg.num_modes):
            signal += amps[m] * np.sin(2.0 * np.pi * freqs[m] * t + phases[m])
        channels[c] = signal

    nominal_range = np.tile(np.array([lo, hi]), (NUM_CHANNELS, 1))
    if np.any(channels < lo) or np.any(channels > hi):
        raise RuntimeError("generated base signal left the nominal range")
    return SensorTrace(
        kind=kind,
        sample_rate_hz=cfg.sample_rate_hz,
        channels=channels,
        nominal_range=nominal_range,
        noise_sigma=bands.noise_sigma,
    )


def add_measurement_noise(trace: SensorTrace, seed: int) -> SensorTrace:
    """Return a copy of ``trace`` with i.i.d. Gaussian noise on every sample.

    Noise draws are consumed channel 0 first, then 1, then 2, each channel
    in time order.  A zero ``noise_sigma`` returns an unmodified copy.
    """
    if trace.noise_sigma == 0.0:
        return replace(trace, channels=trace.channels.copy())
    n = trace.n_samples
    noise = Stream(seed).normals(NUM_CHANNELS * n).reshape(NUM_CHANNELS, n)
    return replace(trace, channels=trace.channels + trace.noise_sigma * noise)


def write_trace_csv(trace: SensorTrace, path) -> None:
    """Write ``t,ch0,ch1,ch2`` rows; time to 1e-6 s, values at 9 significant digits."""
    times = trace.times()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "ch0", "ch1", "ch2"])
        for i in range(trace.n_samples):
            writer.writerow(
                [f"{times[i]:.6f}"] + [f"{trace.channels[c, i]:.8e}" for c in range(NUM_CHANNELS)]
            )
