"""Figure rendering for reports.

All figures are written to files through the Agg backend so the CLI works on
headless machines. Each detector run yields one time-series figure per sensor
(three stacked channel axes with true fault intervals shaded and detector
flags marked) and the comparison report adds a precision/recall bar chart.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .faults import Trajectory
from .telemetry import NUM_CHANNELS, SensorKind

_SHADE = {"color": "tab:red", "alpha": 0.15, "linewidth": 0}


def _flag_intervals(mask: np.ndarray) -> list[tuple[int, int]]:
    """Contiguous runs of a boolean mask as [start, end) index pairs."""
    idx = np.flatnonzero(np.asarray(mask, dtype=bool))
    if idx.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(idx) > 1)
    starts = np.concatenate(([idx[0]], idx[breaks + 1]))
    ends = np.concatenate((idx[breaks] + 1, [idx[-1] + 1]))
    return list(zip(starts.tolist(), ends.tolist()))


def plot_trajectory(traj: Trajectory, kind: SensorKind, path,
                    flags: np.ndarray | None = None, title: str | None = None) -> Path:
    """Render one sensor of one trajectory with fault shading and flags."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    trace = traj.trace(kind)
    labels = traj.labels(kind)
    times = trace.times()
    fig, axes = plt.subplots(NUM_CHANNELS, 1, sharex=True, figsize=(10, 6))
    for c in range(NUM_CHANNELS):
        ax = axes[c]
        ax.plot(times, trace.channels[c], linewidth=0.7, color="tab:blue")
        for start, end in _flag_intervals(labels > 0):
            ax.axvspan(times[start], times[end - 1], **_SHADE)
        if flags is not None:
            flagged = np.flatnonzero(np.asarray(flags) > 0)
            if flagged.size:
                ax.plot(times[flagged], trace.channels[c, flagged], ".",
                        color="tab:orange", markersize=2)
        ax.set_ylabel(f"ch{c}")
        ax.set_ylim(trace.nominal_range[c, 0] * 1.05, trace.nominal_range[c, 1] * 1.05)
    axes[-1].set_xlabel("time [s]")
    fig.suptitle(title or f"{kind.value} trajectory {traj.index}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_metric_bars(reports: list[dict], path) -> Path:
    """Grouped precision/recall bars, one group per (sensor, model)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    labels = []
    precisions = []
    recalls = []
    for report in reports:
        name = report["model"] + ("*" if report["transfer"] else "")
        for sensor, data in sorted(report["sensors"].items()):
            labels.append(f"{name}\n{sensor[:4]}")
            precisions.append(data["precision"])
            recalls.append(data["recall"])
    x = np.arange(len(labels), dtype=float)
    width = 0.38
    fig, ax = plt.subplots(figsize=(max(6.0, 1.4 * len(labels)), 4.5))
    ax.bar(x - width / 2, precisions, width, label="precision", color="tab:blue")
    ax.bar(x + width / 2, recalls, width, label="recall", color="tab:orange")
    ax.set_xticks(x)
    ax.set_xticklabels(labels, fontsize=8)
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("score")
    ax.legend(loc="lower right")
    ax.set_title("Detector comparison (* = cross-sensor transfer)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
