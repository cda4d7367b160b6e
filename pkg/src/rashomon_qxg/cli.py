"""Command-line entry point: ``rashomon-qxg <stage> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .errors import ConfigError, QxgError, StageError
from .pipeline import (
    PipelineConfig,
    load_config,
    prepare_output,
    run_pipeline,
    run_stage,
    stage_agree,
    stage_explain,
    stage_gen,
    stage_qxg,
    stage_report,
    stage_select,
    stage_train,
)
from .rashomon import RashomonCriterion

COMMANDS = ("gen", "qxg", "train-pair", "train-graph", "select", "explain", "agree", "report", "run")
CRITERIA = {"loss": "loss_additive", "perf": "performance_relative"}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML pipeline config")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", type=Path, help="artifact directory")
    common.add_argument("--jobs", type=int, help="worker processes for training and explanation")
    common.add_argument("--model-class", choices=("pair", "graph", "both"), help="model classes to process")
    common.add_argument("--epsilon", type=float, help="Rashomon tolerance")
    common.add_argument("--criterion", choices=sorted(CRITERIA), help="loss: additive loss; perf: relative score")
    common.add_argument("--k-max", type=int, help="largest k for top-k agreement")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="rashomon-qxg", description="Explanation agreement across Rashomon sets of QXG models.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def resolve_config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    changes = {}
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if args.out is not None:
        changes["output_dir"] = str(args.out)
    if args.jobs is not None:
        changes["jobs"] = args.jobs
    if args.k_max is not None:
        changes["k_max"] = args.k_max
    if args.model_class is not None:
        changes["model_classes"] = ("pair", "graph") if args.model_class == "both" else (args.model_class,)
    if args.epsilon is not None or args.criterion is not None:
        mode = CRITERIA[args.criterion] if args.criterion else cfg.criterion.mode
        eps = args.epsilon if args.epsilon is not None else cfg.criterion.epsilon
        try:
            changes["criterion"] = RashomonCriterion(mode, eps)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    try:
        return replace(cfg, **changes)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def dispatch(command: str, cfg: PipelineConfig) -> Path:
    if command == "run":
        return run_pipeline(cfg)
    out = prepare_output(cfg, cfg.output_dir)
    classes = list(cfg.model_classes)
    stages = {
        "gen": (stage_gen,),
        "qxg": (stage_qxg,),
        "train-pair": (stage_train, "pair"),
        "train-graph": (stage_train, "graph"),
        "select": (stage_select, classes),
        "explain": (stage_explain, classes),
        "agree": (stage_agree, classes),
        "report": (stage_report,),
    }
    fn, *extra = stages[command]
    run_stage(command, fn, cfg, out, *extra)
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        out = dispatch(args.command, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except QxgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
