"""Command line interface.

Subcommands cover the full study loop: ``generate`` writes the labeled
dataset, ``train`` fits one of the two detectors, ``eval`` scores a model and
writes report files, ``report`` evaluates every trained model side by side,
and ``plotdata`` exports one trajectory for external plotting. Every report
path also renders the matching figures as PNG files next to the CSV/JSON
output.

Exit codes: 0 success, 1 usage error, 2 data error, 3 training error.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .config import RunConfig, load_run_config
from .errors import DataError, TrainingError, UsageError
from .evaluation import EvalOutcome
from .faults import LabeledDataset, load_dataset, save_dataset
from .pipeline import (
    cnn_flag_series,
    evaluate_cnn_model,
    evaluate_tree_model,
    generate_dataset,
    tree_flag_series,
    train_cnn_model,
    train_tree_model,
)
from .report import (
    comparison_markdown,
    eval_report,
    report_markdown,
    write_json,
    write_markdown,
    write_plot_data_csv,
)
from .telemetry import SensorKind
from .tree import export_rules, load_tree, save_tree
from .cnn import load_cnn, save_cnn


class _Parser(argparse.ArgumentParser):
    """argparse parser that reports usage problems through UsageError."""

    def error(self, message):
        raise UsageError(message)


def _add_common(parser, model=False, model_required=False, transfer=False, stride=False):
    parser.add_argument("--config", metavar="PATH", default=None,
                        help="JSON run configuration (defaults apply when omitted)")
    parser.add_argument("--seed", type=int, default=None, metavar="U64",
                        help="override the global seed")
    parser.add_argument("--out", default=None, metavar="DIR",
                        help="override the output directory")
    if model:
        parser.add_argument("--model", choices=("tree", "cnn"),
                            required=model_required, default=None,
                            help="which detector to use")
    if transfer:
        parser.add_argument("--transfer", action="store_true",
                            help="score the IMU-trained tree on accelerometer data")
    if stride:
        parser.add_argument("--stride", type=int, default=None, metavar="N",
                            help="evaluation stride over window-final samples")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stuckwatch",
                     description="Stuck-value fault detection study toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="simulate trajectories and inject faults")
    _add_common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a detector on the dataset's training split")
    _add_common(p, model=True, model_required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a trained detector on the test split")
    _add_common(p, model=True, model_required=True, transfer=True, stride=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="evaluate all trained models and compare them")
    _add_common(p, stride=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("plotdata", help="export one test trajectory as CSV plus figures")
    _add_common(p, model=True)
    p.set_defaults(func=cmd_plotdata)
    return parser


def _load_config(args) -> RunConfig:
    config = load_run_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        if not (0 <= args.seed < 2 ** 64):
            raise UsageError("--seed must fit in an unsigned 64-bit integer")
        config = dataclasses.replace(config, seed=args.seed)
    if args.out is not None:
        config = dataclasses.replace(config, out_dir=args.out)
    config.validate()
    return config


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise DataError(f"{what} not found: {path} (run the earlier subcommand first)")
    return path


def _load_existing_dataset(config: RunConfig) -> LabeledDataset:
    return load_dataset(_require(config.path("dataset"), "dataset"))


def _stride(args, config: RunConfig) -> int:
    given = getattr(args, "stride", None)
    stride = given if given is not None else config.features.eval_stride
    if stride < 1:
        raise UsageError("--stride must be >= 1")
    return stride


def cmd_generate(args) -> int:
    config = _load_config(args)
    dataset = generate_dataset(config)
    path = save_dataset(dataset, config.path("dataset"))
    n_samples = sum(t.n_samples for t in dataset.trajectories)
    print(f"wrote {path}")
    print(f"trajectories: {len(dataset.trajectories)} "
          f"(train {len(dataset.train_indices)}, test {len(dataset.test_indices)})")
    print(f"samples per sensor: {n_samples}")
    for kind in SensorKind:
        print(f"fault fraction {kind.value}: {dataset.fault_fraction(kind):.4f}")
    return 0


def cmd_train(args) -> int:
    config = _load_config(args)
    dataset = _load_existing_dataset(config)
    if args.model == "tree":
        model = train_tree_model(config, dataset)
        path = save_tree(model, config.path("tree_model"))
        rules = config.path("tree_rules")
        rules.parent.mkdir(parents=True, exist_ok=True)
        rules.write_text(str(export_rules(model)) + "\n")
        print(f"wrote {path}")
        print(f"wrote {rules}")
        print(f"depth: {model.root.depth()}")
    else:
        model, history = train_cnn_model(config, dataset, log=print)
        path = save_cnn(model, config.path("cnn_model"))
        hist_path = config.path("cnn_history")
        write_json(hist_path, {"epoch_loss": history})
        print(f"wrote {path}")
        print(f"wrote {hist_path}")
        print(f"parameters: {model.n_params()}")
    return 0


def _print_outcomes(outcomes: dict[SensorKind, EvalOutcome]) -> None:
    for kind, outcome in outcomes.items():
        print(f"{kind.value}: precision {outcome.score.precision:.4f} "
              f"recall {outcome.score.recall:.4f} "
              f"({outcome.n_evaluated} samples)")


def _eval_one(config: RunConfig, dataset: LabeledDataset, model_name: str,
              transfer: bool, stride: int) -> dict:
    """Evaluate one trained model, write its report files, return the report."""
    if model_name == "tree":
        model = load_tree(_require(config.path("tree_model"), "tree model"))
        outcomes = evaluate_tree_model(config, model, dataset,
                                       stride=stride, transfer=transfer)
    else:
        model = load_cnn(_require(config.path("cnn_model"), "network model"))
        outcomes = evaluate_cnn_model(config, model, dataset, stride=stride)
    tag = model_name + ("-transfer" if transfer else "")
    report = eval_report(model_name, transfer, str(config.path("dataset")),
                         config.features.window, stride, outcomes)
    reports = config.reports_dir()
    write_json(reports / f"eval.{tag}.json", report)
    write_markdown(reports / f"eval.{tag}.md", report_markdown(report))
    _write_trajectory_outputs(config, dataset, model_name, model, transfer, tag)
    _print_outcomes(outcomes)
    return report


def _write_trajectory_outputs(config, dataset, model_name, model, transfer, tag) -> None:
    """Plot-data CSV and per-sensor figures for the first test trajectory."""
    from .plots import plot_trajectory

    position = int(dataset.test_indices[0]) if dataset.test_indices else 0
    traj = dataset.trajectories[position]
    if model_name == "tree":
        kind = SensorKind.ACCELEROMETER if transfer else SensorKind.IMU
        flags = {kind: tree_flag_series(config, model, dataset, position, kind)}
    else:
        flags = cnn_flag_series(config, model, dataset, position)
    reports = config.reports_dir()
    write_plot_data_csv(reports / f"eval.{tag}.plot.csv", traj, flags)
    for kind, series in flags.items():
        plot_trajectory(traj, kind, reports / f"eval.{tag}.{kind.value}.png",
                        flags=series, title=f"{tag} on {kind.value}, trajectory {traj.index}")


def cmd_eval(args) -> int:
    config = _load_config(args)
    if args.transfer and args.model != "tree":
        raise UsageError("--transfer applies only to the tree model")
    dataset = _load_existing_dataset(config)
    _eval_one(config, dataset, args.model, args.transfer, _stride(args, config))
    return 0


def cmd_report(args) -> int:
    from .plots import plot_metric_bars

    config = _load_config(args)
    dataset = _load_existing_dataset(config)
    stride = _stride(args, config)
    reports = []
    for model_name, transfer in (("tree", False), ("cnn", False), ("tree", True)):
        reports.append(_eval_one(config, dataset, model_name, transfer, stride))
    out = config.reports_dir()
    write_json(out / "comparison.json", {"reports": reports})
    write_markdown(out / "comparison.md", comparison_markdown(reports))
    plot_metric_bars(reports, out / "comparison.png")
    print(f"wrote {out / 'comparison.json'}")
    print(f"wrote {out / 'comparison.md'}")
    print(f"wrote {out / 'comparison.png'}")
    return 0


def cmd_plotdata(args) -> int:
    from .plots import plot_trajectory

    config = _load_config(args)
    dataset = _load_existing_dataset(config)
    position = int(dataset.test_indices[0]) if dataset.test_indices else 0
    traj = dataset.trajectories[position]
    flags = {}
    if args.model == "tree":
        model = load_tree(_require(config.path("tree_model"), "tree model"))
        flags[SensorKind.IMU] = tree_flag_series(config, model, dataset, position,
                                                 SensorKind.IMU)
    elif args.model == "cnn":
        model = load_cnn(_require(config.path("cnn_model"), "network model"))
        flags = cnn_flag_series(config, model, dataset, position)
    reports = config.reports_dir()
    path = write_plot_data_csv(reports / "plotdata.csv", traj, flags)
    print(f"wrote {path}")
    for kind in SensorKind:
        fig = plot_trajectory(traj, kind, reports / f"plotdata.{kind.value}.png",
                              flags=flags.get(kind),
                              title=f"{kind.value} trajectory {traj.index}")
        print(f"wrote {fig}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
