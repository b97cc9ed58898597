"""Command-line entry point (``adaptcast`` console script)."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

from . import config as _cfg
from .common import AdaptcastError, ConfigError, StageError, write_csv
from .pipeline import FACETS, PLOT_KINDS, Pipeline, emit_plotdata
from .runconfig import RunConfig, load_run_config

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_STAGE = 3

STAGE_COMMANDS = ("synth", "ingest", "features", "adf", "grid", "select", "report", "test")


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="Run file (INI).")
    common.add_argument("--out", type=Path, help="Output directory (overrides the run file and ADAPTCAST_OUT).")
    common.add_argument("--seed", type=int, help="Seed for synthetic data.")
    common.add_argument("--threads", type=int, default=_cfg.DEFAULT_THREADS, help="Worker processes for the grid.")
    common.add_argument("--reduced-grid", dest="reduced_grid", help="Model predicate restricting the grid.")
    common.add_argument("--input", type=Path, help="Tick CSV to ingest (overrides the run file).")
    common.add_argument(
        "--debug",
        action="store_true",
        help="Enable debug logging.",
    )
    common.add_argument(
        "-v",
        "--verbose",
        action="count",
        default=0,
        help="Increase verbosity.",
    )
    common.add_argument(
        "-s",
        "--silent",
        "-q",
        "--quiet",
        dest="silent",
        action="store_true",
        help="Suppress all output.",
    )

    parser = argparse.ArgumentParser(
        prog="adaptcast", description="Adaptive forecasting pipeline for bracketed order-book data"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGE_COMMANDS:
        sub.add_parser(name, parents=[common], help=f"Run the {name} stage.")
    sub.add_parser("run", parents=[common], help="Run every stage in order.")
    plot = sub.add_parser("plotdata", parents=[common], help="Turn a stage artifact into series,x,y plot data.")
    plot.add_argument("kind", choices=PLOT_KINDS)
    plot.add_argument("artifact", type=Path)
    plot.add_argument("--facet", choices=FACETS, default="w", help="Facet for selection histograms.")
    plot.add_argument("--output", type=Path, help="Where to write the plot data (default: next to the artifact).")
    return parser


def _configure_logging(args: argparse.Namespace) -> None:
    if args.debug:
        os.environ["ADAPTCAST_DEBUG"] = "1"

    # Determine log level from CLI flags:
    if args.silent:
        level = logging.ERROR
    elif args.debug or _cfg.DEBUG:
        level = logging.DEBUG
    elif args.verbose >= 1:
        level = logging.INFO
    else:
        level = logging.WARNING
    logging.basicConfig(level=level, format=_cfg.LOG_FORMAT)


def _run_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_run_config(args.config) if args.config else RunConfig()
    if args.out is not None:
        cfg.out_dir = args.out
    if args.seed is not None:
        cfg.seed = args.seed
    if args.reduced_grid:
        cfg.reduced = args.reduced_grid
    if args.input is not None:
        cfg.input = args.input
    if args.command == "synth":
        cfg.input = None
    elif args.command == "ingest" and cfg.input is None:
        raise ConfigError("ingest needs an input file (--input or [data] input)")
    if args.threads < 1:
        raise ConfigError("--threads must be at least 1")
    cfg.validate()
    return cfg


def _plotdata(args: argparse.Namespace) -> Path:
    frame = emit_plotdata(args.artifact, args.kind, args.facet)
    target = args.output or args.artifact.with_name(f"plot_{args.kind}_{args.artifact.stem}.csv")
    write_csv(frame, target)
    logger.info("Wrote %d plot rows to %s", len(frame), target)
    return target


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    _configure_logging(args)
    try:
        if args.command == "plotdata":
            _plotdata(args)
            return EXIT_OK
        cfg = _run_config(args)
        pipeline = Pipeline(cfg, threads=args.threads)
        if args.command == "run":
            pipeline.run()
        else:
            pipeline.run_stage(args.command)
    except StageError as exc:
        logger.error("%s", exc)
        return EXIT_STAGE
    except AdaptcastError as exc:  # config, validation and predicate errors
        logger.error("%s", exc)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
