"""
Command line entry point.

    multiace fit-linear --config run.yaml
    multiace train      --config run.yaml [--epochs N]
    multiace eval       --config run.yaml [--model PATH] [--file frames.xyz | --data valid_file]
    multiace scan       --config run.yaml --structure mol.xyz --kind dihedral --atoms 0 1 2 3 --start 0 --stop 360
    multiace dimer      --config run.yaml --elements O O
    multiace decompose  --config run.yaml --file frames.xyz
    multiace check      --config run.yaml [--model PATH] [--suites equivariance body_order]
    multiace ablate     --config run.yaml --study message_norm [--epochs N]
"""
import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import pandas as pd

from data.presets import get_ablation_studies
from modules.cli_io import (
    ScanSpec,
    cli_check,
    cli_decompose,
    cli_dimer,
    cli_scan,
    load_model,
    load_run_config,
    parse_extxyz,
    save_model,
    write_table,
)
from modules.errors import ConfigurationError, MultiAceError
from modules.model import build_model
from modules.property_harness import SUITES, reports_frame
from modules.training import ablate, evaluate_frames, fit_linear_ace, train
from utils.report_generator import (
    create_scan_figure,
    create_training_figure,
    render_check_report,
    write_figure,
)
from utils.system_checker import check_runtime, get_runtime_info

logger = logging.getLogger("multiace")


def setup_logging(verbose=False):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        handlers=[logging.StreamHandler()],
        force=True,
    )


def _model_path(args, config):
    return Path(args.model) if getattr(args, "model", None) else config.output_dir / config.run["model_file"]


def _evaluate(model, config, output):
    for key in ("valid_file", "test_file"):
        if not config.data.get(key):
            continue
        frames = config.load_frames(key)
        table, summary = evaluate_frames(frames, model)
        name = key.replace("_file", "")
        write_table(table, output / f"eval_{name}_frames.csv")
        write_table(pd.DataFrame([summary]), output / f"eval_{name}_summary.csv")
        logger.info("%s: %s", name, json.dumps(summary))


def cmd_fit_linear(args, config):
    frames = config.load_frames("train_file")
    spec = config.model_spec()
    model = build_model(spec, frames, config.element_table(frames), seed=config.seed)
    model, info = fit_linear_ace(frames, model, config.loss_spec(), ridge=config.optimizer["ridge"])
    logger.info("Least-squares fit: %s", json.dumps(info))
    output = config.output_dir
    save_model(model, output / config.run["model_file"])
    write_table(pd.DataFrame([info]), output / "fit_summary.csv")
    _evaluate(model, config, output)
    return 0


def cmd_train(args, config):
    frames = config.load_frames("train_file")
    spec = config.model_spec()
    model = build_model(spec, frames, config.element_table(frames), seed=config.seed)
    optimizer = config.optimizer_config()
    if args.epochs is not None:
        optimizer = replace(optimizer, epochs=args.epochs)
    output = config.output_dir
    model, log = train(frames, model, config.loss_spec(), optimizer, log_path=output / "training_log.jsonl")
    save_model(model, output / config.run["model_file"])
    write_table(log, output / "training_log.csv")
    if args.plot:
        write_figure(create_training_figure(log), output / "training_log.html")
    _evaluate(model, config, output)
    return 0


def cmd_eval(args, config):
    model = load_model(_model_path(args, config))
    frames = parse_extxyz(args.file) if args.file else config.load_frames(args.data)
    table, summary = evaluate_frames(frames, model)
    write_table(table, config.output_dir / "eval_frames.csv")
    write_table(pd.DataFrame([summary]), config.output_dir / "eval_summary.csv")
    logger.info("Evaluation: %s", json.dumps(summary))
    return 0


def cmd_scan(args, config):
    model = load_model(_model_path(args, config))
    frames = parse_extxyz(args.structure)
    if not -len(frames) <= args.frame < len(frames):
        raise ConfigurationError(f"Frame {args.frame} not in {args.structure} ({len(frames)} frames)")
    scan = ScanSpec(args.kind, tuple(args.atoms), args.start, args.stop, args.num)
    table = cli_scan(model, scan, frames[args.frame])
    name = f"scan_{args.kind}_{'-'.join(str(a) for a in scan.atoms)}"
    write_table(table, config.output_dir / f"{name}.csv")
    if args.plot:
        write_figure(create_scan_figure(table, title=name), config.output_dir / f"{name}.html")
    return 0


def cmd_dimer(args, config):
    model = load_model(_model_path(args, config))
    table = cli_dimer(model, tuple(args.elements), args.start, args.stop, args.num)
    name = f"dimer_{'-'.join(args.elements)}"
    write_table(table, config.output_dir / f"{name}.csv")
    if args.plot:
        write_figure(create_scan_figure(table, x="distance", title=name), config.output_dir / f"{name}.html")
    return 0


def cmd_decompose(args, config):
    model = load_model(_model_path(args, config))
    table = cli_decompose(model, parse_extxyz(args.file), shift_to_last=args.shift_to_last)
    write_table(table, config.output_dir / "decomposition.csv")
    if args.plot:
        figure_table = table.reset_index().rename(columns={"index": "frame"})
        write_figure(create_scan_figure(figure_table, x="frame", title="Energy decomposition"),
                     config.output_dir / "decomposition.html")
    return 0


def cmd_check(args, config):
    target = load_model(args.model) if args.model else config.model_spec()
    precision = {"f32": "float32", "f64": "float64"}[config.run["precision"]]
    reports, passed = cli_check(target, seed=config.seed, precision=precision, suites=args.suites,
                                corrupt=args.corrupt_coupling)
    output = config.output_dir
    write_table(reports_frame(reports), output / "check_report.csv")
    spec = target.spec if hasattr(target, "spec") else target
    markdown = render_check_report(reports, seed=config.seed, model_spec=spec, runtime=get_runtime_info())
    (output / "check_report.md").write_text(markdown, encoding="utf-8")
    for report in reports:
        logger.info("%-14s %s", report.suite, "pass" if report.passed else "FAIL")
    return 0 if passed else 1


def cmd_ablate(args, config):
    frames = config.load_frames("train_file")
    test_frames = config.load_frames("test_file") if config.data.get("test_file") else None
    optimizer = config.optimizer_config()
    if args.epochs is not None:
        optimizer = replace(optimizer, epochs=args.epochs)
    table = ablate(
        args.study, frames, test_frames,
        base={"model": config.model, "radial": config.radial},
        loss_spec=config.loss_spec(), config=optimizer, ridge=config.optimizer["ridge"],
        precision=config.run["precision"], table=config.element_table(frames),
    )
    write_table(table, config.output_dir / f"ablation_{args.study}.csv")
    return 0 if (table["status"] == "ok").all() else 1


COMMANDS = {
    "fit-linear": cmd_fit_linear,
    "train": cmd_train,
    "eval": cmd_eval,
    "scan": cmd_scan,
    "dimer": cmd_dimer,
    "decompose": cmd_decompose,
    "check": cmd_check,
    "ablate": cmd_ablate,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="YAML run configuration")
    common.add_argument("--seed", type=int, default=None, help="override run.seed")
    common.add_argument("--precision", choices=("f32", "f64"), default=None, help="override run.precision")
    common.add_argument("--output", default=None, help="override run.output directory")
    common.add_argument("--verbose", action="store_true", help="debug logging")
    common.add_argument("--plot", action="store_true", help="also write plotly HTML figures")

    parser = argparse.ArgumentParser(prog="multiace", description="Multi-ACE interatomic potentials")
    commands = parser.add_subparsers(dest="command", required=True)

    commands.add_parser("fit-linear", parents=[common], help="least-squares fit of the linear-ace preset")

    sub = commands.add_parser("train", parents=[common], help="gradient training of a message passing preset")
    sub.add_argument("--epochs", type=int, default=None)

    sub = commands.add_parser("eval", parents=[common], help="energy and force errors on a dataset")
    sub.add_argument("--model", default=None)
    sub.add_argument("--file", default=None, help="extended XYZ file (default: --data entry of the config)")
    sub.add_argument("--data", default="test_file", choices=("train_file", "valid_file", "test_file"))

    sub = commands.add_parser("scan", parents=[common], help="rigid scan of a bond, angle or dihedral")
    sub.add_argument("--model", default=None)
    sub.add_argument("--structure", required=True, help="extended XYZ file with the reference geometry")
    sub.add_argument("--frame", type=int, default=0)
    sub.add_argument("--kind", required=True, choices=("bond", "angle", "dihedral"))
    sub.add_argument("--atoms", required=True, type=int, nargs="+")
    sub.add_argument("--start", required=True, type=float)
    sub.add_argument("--stop", required=True, type=float)
    sub.add_argument("--num", type=int, default=101)

    sub = commands.add_parser("dimer", parents=[common], help="dissociation curve of two atoms")
    sub.add_argument("--model", default=None)
    sub.add_argument("--elements", required=True, nargs=2)
    sub.add_argument("--start", type=float, default=0.5)
    sub.add_argument("--stop", type=float, default=None, help="default: 2 * r_cut")
    sub.add_argument("--num", type=int, default=200)

    sub = commands.add_parser("decompose", parents=[common], help="body-ordered energy decomposition")
    sub.add_argument("--model", default=None)
    sub.add_argument("--file", required=True)
    sub.add_argument("--shift-to-last", action="store_true", help="report energies relative to the last frame")

    sub = commands.add_parser("check", parents=[common], help="run the property suites")
    sub.add_argument("--model", default=None, help="model archive (default: fresh model from the config)")
    sub.add_argument("--suites", nargs="+", choices=SUITES, default=None)
    sub.add_argument("--corrupt-coupling", action="store_true", help="negative control: perturb coupling tables")

    sub = commands.add_parser("ablate", parents=[common], help="fit every variant of an ablation study")
    sub.add_argument("--study", required=True, choices=sorted(get_ablation_studies()))
    sub.add_argument("--epochs", type=int, default=None)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)
    if args.verbose:
        runtime = check_runtime()
        for warning in runtime["warnings"]:
            logger.warning(warning)
        logger.debug("Runtime: %s", json.dumps(get_runtime_info()))
    overrides = {"run": {"seed": args.seed, "precision": args.precision, "output": args.output}}
    try:
        config = load_run_config(args.config, overrides)
        return COMMANDS[args.command](args, config)
    except MultiAceError as exc:
        logger.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
