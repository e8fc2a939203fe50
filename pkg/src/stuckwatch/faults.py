"""Stuck-value fault injection and labelled dataset assembly.

A stuck-value fault freezes one axis (or all three) of a sensor at either
the last pre-fault sample ("stuck at last") or at a random level drawn
around the nominal range ("stuck at random").  Each variant optionally
keeps measurement noise on top of the held value; without it the interface
reads back a perfectly constant value, the classic dead-interface
signature.  Labels are per sensor and per sample: a sample is faulty when
at least one of the sensor's channels was overwritten at that index.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import DataError, PolicyError, UsageError
from .rng import Stream, derive_seed
from .telemetry import NUM_CHANNELS, SensorKind, SensorTrace

DATASET_FORMAT = "stuckwatch-dataset"
DATASET_VERSION = 1


class FaultKind(Enum):
    STUCK_AT_LAST = "stuck_at_last"
    STUCK_AT_RANDOM = "stuck_at_random"


@dataclass(frozen=True)
class FaultCase:
    """One of the eight (kind, axis scope, noise) fault combinations."""

    kind: FaultKind
    all_axes: bool
    noisy: bool

    @property
    def label(self) -> str:
        scope = "all" if self.all_axes else "single"
        noise = "noisy" if self.noisy else "clean"
        return f"{self.kind.value}/{scope}/{noise}"


ALL_FAULT_CASES: tuple[FaultCase, ...] = tuple(
    FaultCase(kind, all_axes, noisy)
    for kind in (FaultKind.STUCK_AT_LAST, FaultKind.STUCK_AT_RANDOM)
    for all_axes in (False, True)
    for noisy in (False, True)
)

_CASE_INDEX = {case: i for i, case in enumerate(ALL_FAULT_CASES)}
_CASE_BY_LABEL = {case.label: case for case in ALL_FAULT_CASES}


@dataclass(frozen=True)
class FaultSpec:
    """One injected fault on one sensor.

    ``axis`` is a channel index 0..2, or None for all three axes.
    ``stuck_values`` is present only for STUCK_AT_RANDOM and holds one level
    per affected axis (so length 1 or 3).
    """

    kind: FaultKind
    axis: int | None
    noise_on_top: bool
    start: int
    duration: int
    stuck_values: tuple[float, ...] | None = None

    def validate(self, n_samples: int) -> None:
        if self.axis is not None and self.axis not in range(NUM_CHANNELS):
            raise ValueError(f"axis must be None or 0..2, got {self.axis}")
        if self.start < 1:
            raise ValueError("start must be >= 1 (a preceding sample is required)")
        if self.duration < 1:
            raise ValueError("duration must be >= 1")
        if self.start + self.duration > n_samples:
            raise ValueError("fault interval exceeds the trace length")
        n_axes = NUM_CHANNELS if self.axis is None else 1
        if self.kind is FaultKind.STUCK_AT_RANDOM:
            if self.stuck_values is None or len(self.stuck_values) != n_axes:
                raise ValueError("STUCK_AT_RANDOM needs one stuck value per affected axis")
        elif self.stuck_values is not None:
            raise ValueError("STUCK_AT_LAST holds the last sample; stuck_values must be None")

    @property
    def affected_axes(self) -> tuple[int, ...]:
        return tuple(range(NUM_CHANNELS)) if self.axis is None else (self.axis,)

    @property
    def end(self) -> int:
        return self.start + self.duration

    @property
    def case(self) -> FaultCase:
        return FaultCase(self.kind, self.axis is None, self.noise_on_top)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "axis": self.axis,
            "noise_on_top": self.noise_on_top,
            "start": self.start,
            "duration": self.duration,
            "stuck_values": list(self.stuck_values) if self.stuck_values is not None else None,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FaultSpec":
        stuck = data["stuck_values"]
        return cls(
            kind=FaultKind(data["kind"]),
            axis=data["axis"],
            noise_on_top=data["noise_on_top"],
            start=data["start"],
            duration=data["duration"],
            stuck_values=tuple(stuck) if stuck is not None else None,
        )


@dataclass
class FaultLabel:
    """Per-sample binary flags plus the specs that produced them."""

    flags: np.ndarray  # uint8, shape (n,)
    faults: list[FaultSpec]

    def __post_init__(self):
        self.flags = np.asarray(self.flags, dtype=np.uint8)


def inject_fault(trace: SensorTrace, spec: FaultSpec, seed: int) -> tuple[SensorTrace, FaultLabel]:
    """Apply one fault to a copy of ``trace``; the input is left untouched.

    The held level is the sample at ``start - 1`` for STUCK_AT_LAST and the
    spec's stuck value for STUCK_AT_RANDOM.  With ``noise_on_top`` set,
    Gaussian noise at the trace's noise_sigma (seeded from ``seed`` per
    axis) rides on the held level; without it the samples are exactly
    constant.  Samples and axes outside the fault are bit-identical.
    """
    spec.validate(trace.n_samples)
    channels = trace.channels.copy()
    s, e = spec.start, spec.end
    for slot, axis in enumerate(spec.affected_axes):
        if spec.kind is FaultKind.STUCK_AT_LAST:
            held = channels[axis, s - 1]
        else:
            held = spec.stuck_values[slot]
        channels[axis, s:e] = held
        if spec.noise_on_top and trace.noise_sigma > 0.0:
            noise = Stream(derive_seed(seed, "hold-noise", axis)).normals(spec.duration)
            channels[axis, s:e] += trace.noise_sigma * noise
    flags = np.zeros(trace.n_samples, dtype=np.uint8)
    flags[s:e] = 1
    return replace(trace, channels=channels), FaultLabel(flags, [spec])


def _uniform_mixture() -> dict[FaultCase, float]:
    return {case: 1.0 / len(ALL_FAULT_CASES) for case in ALL_FAULT_CASES}


@dataclass(frozen=True)
class InjectionPolicy:
    """How faults are drawn and placed for each (trajectory, sensor) pair.

    Fault starts are placed so intervals never overlap and are separated by
    at least ``min_gap`` samples.  Durations are drawn from
    ``duration_range`` but partitioned so the faulted-sample share of each
    sensor hits ``target_fault_fraction``; fault counts from
    ``faults_per_trajectory`` that cannot satisfy both constraints are
    skipped (a 0 upper bound disables injection entirely).
    """

    seed: int
    faults_per_trajectory: tuple[int, int] = (1, 4)
    duration_range: tuple[int, int] = (50, 600)
    target_fault_fraction: float = 0.5
    min_gap: int = 180
    stuck_range_scale: float = 2.0
    mixture: dict[FaultCase, float] = field(default_factory=_uniform_mixture)

    def validate(self) -> None:
        k_lo, k_hi = self.faults_per_trajectory
        if k_lo < 0 or k_hi < k_lo:
            raise UsageError(f"bad faults_per_trajectory range {self.faults_per_trajectory}")
        d_lo, d_hi = self.duration_range
        if d_lo < 1 or d_hi < d_lo:
            raise UsageError(f"bad duration_range {self.duration_range}")
        if not (0.0 < self.target_fault_fraction < 1.0):
            raise UsageError("target_fault_fraction must lie in (0, 1)")
        if self.min_gap < 0:
            raise UsageError("min_gap must be >= 0")
        if self.stuck_range_scale <= 0:
            raise UsageError("stuck_range_scale must be > 0")
        if set(self.mixture) != set(ALL_FAULT_CASES):
            raise UsageError("mixture must assign a weight to every fault case")
        weights = list(self.mixture.values())
        if any(w < 0 for w in weights) or abs(sum(weights) - 1.0) > 1e-9:
            raise UsageError("mixture weights must be >= 0 and sum to 1")


def _plan_intervals(stream: Stream, n: int, policy: InjectionPolicy) -> list[tuple[int, int]]:
    """Draw non-overlapping (start, duration) intervals for one sensor.

    The chosen fault count is uniform over the counts in the policy range
    that can both partition the target faulted-sample budget within the
    duration range and fit into the trace with the minimum gap.
    """
    k_lo, k_hi = policy.faults_per_trajectory
    if k_hi == 0:
        return []
    d_lo, d_hi = policy.duration_range
    target = int(round(policy.target_fault_fraction * n))
    feasible = [
        k
        for k in range(max(k_lo, 1), k_hi + 1)
        if k * d_lo <= target <= k * d_hi and target + (k - 1) * policy.min_gap <= n - 1
    ]
    if not feasible:
        raise PolicyError(
            f"no fault count in {policy.faults_per_trajectory} can cover "
            f"{target} samples with durations {policy.duration_range} "
            f"and gap {policy.min_gap} in a {n}-sample trajectory"
        )
    k = feasible[stream.randint(0, len(feasible) - 1)]

    durations = []
    budget = target
    for i in range(k):
        m = k - i - 1  # faults still to draw after this one
        lo_i = max(d_lo, budget - m * d_hi)
        hi_i = min(d_hi, budget - m * d_lo)
        d = stream.randint(lo_i, hi_i)
        durations.append(d)
        budget -= d

    slack = (n - 1) - (sum(durations) + (k - 1) * policy.min_gap)
    if slack < 0:
        raise PolicyError("fault durations cannot fit without overlap")
    cuts = sorted(stream.randint(0, slack) for _ in range(k))
    gaps = [cuts[0]] + [cuts[i] - cuts[i - 1] for i in range(1, k)]
    intervals = []
    pos = 1
    for i in range(k):
        start = pos + gaps[i]
        intervals.append((start, durations[i]))
        pos = start + durations[i] + policy.min_gap
    return intervals


class _CaseQuota:
    """Assign fault cases so sample exposure tracks the mixture weights.

    Independent draws leave the per-case sample counts far too dispersed at
    desk scale (a handful of faults per case, durations spanning an order of
    magnitude), which makes per-case recall estimates noisy.  Assigning each
    fault to the case with the largest sample deficit realizes the mixture
    proportions almost exactly while the fault order stays random.
    """

    def __init__(self, mixture: dict[FaultCase, float]):
        self._weights = {case: w for case, w in mixture.items() if w > 0.0}
        self._assigned = {case: 0 for case in self._weights}
        self._total = 0

    def take(self, duration: int) -> FaultCase:
        total = self._total + duration
        best = None
        best_deficit = None
        for case in ALL_FAULT_CASES:
            if case not in self._weights:
                continue
            deficit = self._weights[case] * total - self._assigned[case]
            if best is None or deficit > best_deficit:
                best = case
                best_deficit = deficit
        self._assigned[best] += duration
        self._total = total
        return best


def _draw_spec(stream: Stream, trace: SensorTrace, policy: InjectionPolicy,
               start: int, duration: int, case: FaultCase) -> FaultSpec:
    axis = None if case.all_axes else stream.randint(0, NUM_CHANNELS - 1)
    stuck = None
    if case.kind is FaultKind.STUCK_AT_RANDOM:
        axes = range(NUM_CHANNELS) if axis is None else (axis,)
        mid, half = trace.range_mid, trace.range_half
        stuck = tuple(
            float(mid[a] + (2.0 * stream.uniform() - 1.0) * policy.stuck_range_scale * half[a])
            for a in axes
        )
    return FaultSpec(case.kind, axis, case.noisy, start, duration, stuck)


@dataclass
class Trajectory:
    """One labelled trajectory: both sensors, flags, and applied faults."""

    index: int
    imu: SensorTrace
    accelerometer: SensorTrace
    label_imu: np.ndarray
    label_accelerometer: np.ndarray
    faults: list[tuple[SensorKind, FaultSpec]]

    def trace(self, kind: SensorKind) -> SensorTrace:
        return self.imu if kind is SensorKind.IMU else self.accelerometer

    def labels(self, kind: SensorKind) -> np.ndarray:
        return self.label_imu if kind is SensorKind.IMU else self.label_accelerometer

    def specs(self, kind: SensorKind) -> list[FaultSpec]:
        return [spec for sensor, spec in self.faults if sensor is kind]

    def case_ids(self, kind: SensorKind) -> np.ndarray:
        """Per-sample fault-case index (see ALL_FAULT_CASES), -1 where nominal."""
        ids = np.full(self.trace(kind).n_samples, -1, dtype=np.int8)
        for spec in self.specs(kind):
            ids[spec.start:spec.end] = _CASE_INDEX[spec.case]
        return ids

    @property
    def n_samples(self) -> int:
        return self.imu.n_samples


@dataclass
class LabeledDataset:
    trajectories: list[Trajectory]
    train_indices: tuple[int, ...]
    test_indices: tuple[int, ...]

    @property
    def sample_rate_hz(self) -> float:
        return self.trajectories[0].imu.sample_rate_hz

    def subset(self, indices) -> list[Trajectory]:
        return [self.trajectories[i] for i in indices]

    def fault_fraction(self, kind: SensorKind) -> float:
        total = sum(t.n_samples for t in self.trajectories)
        faulted = sum(int(t.labels(kind).sum()) for t in self.trajectories)
        return faulted / total

    def save(self, csv_path) -> Path:
        return save_dataset(self, csv_path)

    @classmethod
    def load(cls, csv_path) -> "LabeledDataset":
        return load_dataset(csv_path)


def build_dataset(
    policy: InjectionPolicy,
    trace_pairs: list[tuple[SensorTrace, SensorTrace]],
    train_fraction: float = 0.8,
) -> LabeledDataset:
    """Inject faults into (IMU, accelerometer) trace pairs and split them.

    Sensors are treated independently: each gets its own plan and draws from
    streams derived from the policy seed, the trajectory index, and the
    sensor kind.  The train/test split shuffles whole trajectories with a
    stream derived from the policy seed.
    """
    policy.validate()
    if not trace_pairs:
        raise DataError("build_dataset needs at least one trajectory")
    if not (0.0 < train_fraction < 1.0):
        raise UsageError("train_fraction must lie in (0, 1)")

    trajectories = []
    quotas = {kind: _CaseQuota(policy.mixture) for kind in SensorKind}
    for index, (imu, accel) in enumerate(trace_pairs):
        if imu.kind is not SensorKind.IMU or accel.kind is not SensorKind.ACCELEROMETER:
            raise DataError("trace pairs must be ordered (IMU, accelerometer)")
        if imu.n_samples != accel.n_samples:
            raise DataError("paired traces must have equal length")
        faulted = {}
        labels = {}
        faults: list[tuple[SensorKind, FaultSpec]] = []
        for kind, trace in ((SensorKind.IMU, imu), (SensorKind.ACCELEROMETER, accel)):
            stream = Stream(derive_seed(policy.seed, "plan", index, kind.value))
            flags = np.zeros(trace.n_samples, dtype=np.uint8)
            current = trace
            for j, (start, duration) in enumerate(_plan_intervals(stream, trace.n_samples, policy)):
                case = quotas[kind].take(duration)
                spec = _draw_spec(stream, trace, policy, start, duration, case)
                noise_seed = derive_seed(policy.seed, "fault-noise", index, kind.value, j)
                current, label = inject_fault(current, spec, noise_seed)
                flags |= label.flags
                faults.append((kind, spec))
            faulted[kind] = current
            labels[kind] = flags
        trajectories.append(
            Trajectory(
                index=index,
                imu=faulted[SensorKind.IMU],
                accelerometer=faulted[SensorKind.ACCELEROMETER],
                label_imu=labels[SensorKind.IMU],
                label_accelerometer=labels[SensorKind.ACCELEROMETER],
                faults=faults,
            )
        )

    order = Stream(derive_seed(policy.seed, "split")).permutation(len(trajectories))
    n_train = int(round(train_fraction * len(trajectories)))
    n_train = min(max(n_train, 1), len(trajectories) - 1) if len(trajectories) > 1 else 1
    train = tuple(sorted(int(i) for i in order[:n_train]))
    test = tuple(sorted(int(i) for i in order[n_train:]))
    return LabeledDataset(trajectories, train, test)


def sidecar_path(csv_path) -> Path:
    return Path(csv_path).with_suffix(".faults.json")


def save_dataset(dataset: LabeledDataset, csv_path) -> Path:
    """Write samples to CSV and structure/fault metadata to a JSON sidecar.

    CSV columns: t,imu0,imu1,imu2,acc0,acc1,acc2,label_imu,label_acc with
    the time column restarting at zero for each trajectory; trajectory
    boundaries live in the sidecar.
    """
    csv_path = Path(csv_path)
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["t", "imu0", "imu1", "imu2", "acc0", "acc1", "acc2", "label_imu", "label_acc"]
        )
        for traj in dataset.trajectories:
            times = traj.imu.times()
            imu_ch = traj.imu.channels
            acc_ch = traj.accelerometer.channels
            for i in range(traj.n_samples):
                row = [f"{times[i]:.6f}"]
                row += [f"{imu_ch[c, i]:.8e}" for c in range(NUM_CHANNELS)]
                row += [f"{acc_ch[c, i]:.8e}" for c in range(NUM_CHANNELS)]
                row += [str(int(traj.label_imu[i])), str(int(traj.label_accelerometer[i]))]
                writer.writerow(row)

    meta = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "sample_rate_hz": dataset.sample_rate_hz,
        "train_trajectories": list(dataset.train_indices),
        "test_trajectories": list(dataset.test_indices),
        "trajectories": [
            {
                "index": traj.index,
                "start_row": int(start_row),
                "length": traj.n_samples,
                "sensors": {
                    kind.value: {
                        "noise_sigma": traj.trace(kind).noise_sigma,
                        "nominal_range": traj.trace(kind).nominal_range.tolist(),
                    }
                    for kind in SensorKind
                },
                "faults": [
                    {"sensor": kind.value, **spec.to_dict()} for kind, spec in traj.faults
                ],
            }
            for traj, start_row in zip(
                dataset.trajectories,
                np.concatenate([[0], np.cumsum([t.n_samples for t in dataset.trajectories])[:-1]]),
            )
        ],
    }
    with open(sidecar_path(csv_path), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return csv_path


def load_dataset(csv_path) -> LabeledDataset:
    csv_path = Path(csv_path)
    side = sidecar_path(csv_path)
    if not csv_path.exists():
        raise DataError(f"dataset file not found: {csv_path}")
    if not side.exists():
        raise DataError(f"dataset sidecar not found: {side}")
    with open(side) as fh:
        meta = json.load(fh)
    if meta.get("format") != DATASET_FORMAT:
        raise DataError(f"{side} is not a {DATASET_FORMAT} sidecar")
    if meta.get("version") != DATASET_VERSION:
        raise DataError(f"unsupported dataset version {meta.get('version')}")

    expected_header = ["t", "imu0", "imu1", "imu2", "acc0", "acc1", "acc2", "label_imu", "label_acc"]
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != expected_header:
            raise DataError(f"unexpected dataset columns {header}")
        rows = list(reader)

    rate = float(meta["sample_rate_hz"])
    trajectories = []
    for entry in meta["trajectories"]:
        start, length = entry["start_row"], entry["length"]
        block = rows[start:start + length]
        if len(block) != length:
            raise DataError("dataset CSV shorter than sidecar row ranges")
        imu_ch = np.empty((NUM_CHANNELS, length))
        acc_ch = np.empty((NUM_CHANNELS, length))
        label_imu = np.empty(length, dtype=np.uint8)
        label_acc = np.empty(length, dtype=np.uint8)
        try:
            for i, row in enumerate(block):
                imu_ch[:, i] = [float(row[1]), float(row[2]), float(row[3])]
                acc_ch[:, i] = [float(row[4]), float(row[5]), float(row[6])]
                label_imu[i] = int(row[7])
                label_acc[i] = int(row[8])
        except (ValueError, IndexError) as exc:
            raise DataError(f"malformed dataset row near {start + i + 2}: {exc}") from exc
        sensors = entry["sensors"]
        traces = {}
        for kind, channels in ((SensorKind.IMU, imu_ch), (SensorKind.ACCELEROMETER, acc_ch)):
            info = sensors[kind.value]
            traces[kind] = SensorTrace(
                kind=kind,
                sample_rate_hz=rate,
                channels=channels,
                nominal_range=np.asarray(info["nominal_range"]),
                noise_sigma=float(info["noise_sigma"]),
            )
        faults = [
            (SensorKind(f["sensor"]), FaultSpec.from_dict(f)) for f in entry["faults"]
        ]
        trajectories.append(
            Trajectory(
                index=entry["index"],
                imu=traces[SensorKind.IMU],
                accelerometer=traces[SensorKind.ACCELEROMETER],
                label_imu=label_imu,
                label_accelerometer=label_acc,
                faults=faults,
            )
        )
    return LabeledDataset(
        trajectories,
        tuple(meta["train_trajectories"]),
        tuple(meta["test_trajectories"]),
    )


def case_from_label(label: str) -> FaultCase:
    try:
        return _CASE_BY_LABEL[label]
    except KeyError:
        raise DataError(f"unknown fault case label {label!r}") from None


def case_index(case: FaultCase) -> int:
    return _CASE_INDEX[case]
