"""This file contains the command-line entry point."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import (
    List,
    Optional,
)

from pydantic import ValidationError

from app.cli import commands
from app.core.config import settings
from app.core.exceptions import (
    ConfigError,
    LipMotionError,
)
from app.core.logging import (
    logger,
    setup_logging,
)
from app.tools.models.config_model import RunConfig

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage already; route the message through the same stderr format."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog=settings.PROJECT_NAME, description="3D lip motion speaker recognition toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {settings.VERSION}")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="errors only on stderr")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration (strict schema)")
    common.add_argument("--seed", type=int, help="override the generator and training seeds")
    common.add_argument("--out", type=Path, required=True, help="output directory")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data", type=Path, required=True, help="dataset directory or preprocessed store")

    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("gen", parents=[common], help="generate a synthetic dataset")
    pre = sub.add_parser("preprocess", parents=[common, data], help="posture-correct and resample utterances")
    pre.add_argument("--index-map", type=Path, help="lip index map (one landmark index per line)")
    sub.add_parser("train", parents=[common, data], help="train one configuration")
    ev = sub.add_parser("eval", parents=[common, data], help="score a checkpoint on the test split")
    ev.add_argument("--checkpoint", type=Path, required=True)
    ab = sub.add_parser("ablate", parents=[common, data], help="four-way feedback ablation")
    ab.add_argument("--with-2d", action="store_true", help="add a row trained on depth-free landmarks")
    sub.add_parser("stats", parents=[common, data], help="text-independence analysis")
    pp = sub.add_parser("plot-prior", parents=[common, data], help="fluctuation prior heatmap")
    pp.add_argument("--checkpoint", type=Path, help="also plot the learned feedback vector of this checkpoint")
    return parser


def load_config(path: Optional[Path], seed: Optional[int]) -> RunConfig:
    """Read and validate the run configuration, applying the ``--seed`` override."""
    payload: dict = {}
    if path is not None:
        try:
            payload = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc.strerror}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} (line {exc.lineno}): {exc.msg}")
    config = RunConfig.model_validate(payload)
    if seed is None and path is None:
        seed = settings.DEFAULT_SEED
    if seed is not None:
        config = config.model_copy(
            update={
                "synthetic": config.synthetic.model_copy(update={"seed": seed}),
                "train": config.train.model_copy(update={"seed": seed}),
            }
        )
    return config


def _format_validation(exc: ValidationError) -> List[str]:
    """One ``field -> message`` line per error."""
    return [f"{' -> '.join(str(p) for p in err['loc'])}: {err['msg']}" for err in exc.errors()]


def dispatch(args: argparse.Namespace, config: RunConfig) -> str:
    common = {"config": config, "out": args.out}
    match args.command:
        case "gen":
            return commands.cmd_gen(**common)
        case "preprocess":
            return commands.cmd_preprocess(**common, data=args.data, index_map=args.index_map)
        case "train":
            return commands.cmd_train(**common, data=args.data)
        case "eval":
            return commands.cmd_eval(**common, data=args.data, checkpoint=args.checkpoint)
        case "ablate":
            return commands.cmd_ablate(**common, data=args.data, with_2d=args.with_2d)
        case "stats":
            return commands.cmd_stats(**common, data=args.data)
        case "plot-prior":
            return commands.cmd_plot_prior(**common, data=args.data, checkpoint=args.checkpoint)
    raise ConfigError(f"unknown command {args.command!r}")


def _config_error(command: str, exc: ConfigError) -> int:
    logger.error("config_error", command=command, error=str(exc))
    print(f"config error: {exc}", file=sys.stderr)
    return EXIT_CONFIG


def main(argv: Optional[List[str]] = None) -> int:
    """Run one subcommand; stdout gets the summary line, stderr everything else.

    Returns:
        int: 0 on success, 2 for configuration or usage errors, 1 for runtime failures.
    """
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    level = "DEBUG" if args.verbose else "ERROR" if args.quiet else None
    if level is not None:
        setup_logging(level)
    logger.debug(
        "logging_initialized",
        environment=settings.ENVIRONMENT.value,
        log_level=level or settings.LOG_LEVEL,
        log_format=settings.LOG_FORMAT,
    )

    try:
        config = load_config(args.config, args.seed)
    except ValidationError as exc:
        errors = _format_validation(exc)
        logger.error("config_validation_error", command=args.command, errors=errors)
        for line in errors:
            print(f"config error: {line}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        return _config_error(args.command, exc)

    try:
        summary = dispatch(args, config)
    except ConfigError as exc:
        return _config_error(args.command, exc)
    except (LipMotionError, ValidationError) as exc:
        logger.error("command_failed", command=args.command, error_type=type(exc).__name__, error=str(exc))
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    print(summary)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
