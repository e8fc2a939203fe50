"""Evaluation reports: JSON, Markdown tables, and plot-data CSV.

The JSON file is the machine-readable record; the Markdown mirrors it as a
precision/recall table plus a per-fault-case breakdown; the plot-data CSV
carries one test trajectory's signals, labels and flags so the time-series
figures can be reproduced outside this package.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .evaluation import EvalOutcome
from .faults import Trajectory
from .telemetry import NUM_CHANNELS, SensorKind

REPORT_FORMAT = "stuckwatch-report"
REPORT_VERSION = 1


def write_json(path, payload: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def eval_report(model_name: str, transfer: bool, dataset_path: str,
                window: int, stride: int,
                outcomes: dict[SensorKind, EvalOutcome]) -> dict:
    return {
        "format": REPORT_FORMAT,
        "version": REPORT_VERSION,
        "model": model_name,
        "transfer": transfer,
        "dataset": str(dataset_path),
        "window": window,
        "stride": stride,
        "sensors": {kind.value: outcome.as_dict() for kind, outcome in outcomes.items()},
    }


def _metrics_table(rows: list[tuple[str, float, float]]) -> list[str]:
    lines = ["| Model | Precision | Recall |", "| --- | --- | --- |"]
    for name, precision, recall in rows:
        lines.append(f"| {name} | {precision:.2f} | {recall:.2f} |")
    return lines


def report_markdown(report: dict) -> str:
    """Render one evaluation report as Markdown."""
    name = report["model"] + (" (transfer)" if report["transfer"] else "")
    lines = [f"# Evaluation: {name}", ""]
    lines.append(f"Dataset: `{report['dataset']}`, window {report['window']}, "
                 f"stride {report['stride']}.")
    lines.append("")
    for sensor, data in sorted(report["sensors"].items()):
        lines.append(f"## {sensor}")
        lines.append("")
        lines += _metrics_table([(name, data["precision"], data["recall"])])
        lines.append("")
        lines.append(
            f"Evaluated samples: {data['n_evaluated']} "
            f"(tp={data['tp']}, fp={data['fp']}, fn={data['fn']}, tn={data['tn']})."
        )
        lines.append(
            f"Recall on noise-free faults: {data['noise_free_recall']:.3f}; "
            f"on faults with noise: {data['noisy_recall']:.3f}. "
            f"Fraction of missed faulty samples that carry noise: "
            f"{data['noise_fn_fraction']:.3f}."
        )
        lines.append("")
        if data["cases"]:
            lines.append("| Fault case | Samples | Detected | Recall |")
            lines.append("| --- | --- | --- | --- |")
            for label, stats in sorted(data["cases"].items()):
                lines.append(
                    f"| {label} | {stats['count']} | {stats['detected']} | {stats['recall']:.3f} |"
                )
            lines.append("")
    return "\n".join(lines)


def comparison_markdown(reports: list[dict]) -> str:
    """Merge several evaluation reports into side-by-side tables per sensor."""
    sensors: dict[str, list[tuple[str, float, float]]] = {}
    for report in reports:
        name = report["model"] + (" (transfer)" if report["transfer"] else "")
        for sensor, data in report["sensors"].items():
            sensors.setdefault(sensor, []).append((name, data["precision"], data["recall"]))
    lines = ["# Model comparison", ""]
    for sensor in sorted(sensors):
        lines.append(f"## {sensor}")
        lines.append("")
        lines += _metrics_table(sensors[sensor])
        lines.append("")
    return "\n".join(lines)


def write_markdown(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def write_plot_data_csv(path, traj: Trajectory,
                        flags: dict[SensorKind, np.ndarray] | None = None) -> Path:
    """One trajectory over time: t, six channels, labels, detector flags."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    flags = flags or {}
    flag_imu = np.asarray(flags.get(SensorKind.IMU, np.zeros(traj.n_samples, dtype=np.uint8)))
    flag_acc = np.asarray(
        flags.get(SensorKind.ACCELEROMETER, np.zeros(traj.n_samples, dtype=np.uint8))
    )
    times = traj.imu.times()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["t", "imu0", "imu1", "imu2", "acc0", "acc1", "acc2",
             "label_imu", "label_acc", "flag_imu", "flag_acc"]
        )
        for i in range(traj.n_samples):
            row = [f"{times[i]:.6f}"]
            row += [f"{traj.imu.channels[c, i]:.8e}" for c in range(NUM_CHANNELS)]
            row += [f"{traj.accelerometer.channels[c, i]:.8e}" for c in range(NUM_CHANNELS)]
            row += [str(int(traj.label_imu[i])), str(int(traj.label_accelerometer[i])),
                    str(int(flag_imu[i])), str(int(flag_acc[i]))]
            writer.writerow(row)
    return path
