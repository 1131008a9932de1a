#!/usr/bin/env python3
"""
PATH-X command line

Usage:
    pathx synth --k 3 --n 300 --seed 7 --out synthetic
    pathx run --config synthetic/pathx.toml
    pathx stratify --config pathx.toml --k 2 --k 3
    pathx explain --config pathx.toml --cases case_001 case_002

Exit codes: 0 success, 1 usage, 2 input format, 3 numerical failure.
"""

import argparse
import logging
import sys
from typing import List, Optional

from pathx import __version__
from pathx.config import get_settings, load_pipeline_config
from pathx.errors import PathXError, UsageError
from pathx.schemas.schemas import PipelineConfig
from pathx.services.pipeline_service import PipelineService, cmd_synth

logger = logging.getLogger("pathx")

EXIT_USAGE = 1


class ArgumentParser(argparse.ArgumentParser):
    """argparse with the usage exit code pinned to 1"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def configure_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        stream=sys.stderr,
    )


def build_parser() -> ArgumentParser:
    common = ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML pipeline config (default: ./pathx.toml when present)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", help="output directory (fallback: PATHX_OUT)")
    common.add_argument("-j", "--workers", type=int, help="worker threads")
    common.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")

    parser = ArgumentParser(prog="pathx", description="Pathology image to survival-risk pipeline")
    parser.add_argument("--version", action="version", version=f"pathx {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", parents=[common], help="generate a synthetic cohort")
    synth.add_argument("--k", type=int, help="planted groups")
    synth.add_argument("--n", type=int, help="cases")
    synth.add_argument("--separation", type=float, help="distance between planted group centers")
    synth.add_argument("--censoring-rate", type=float, help="fraction of censored cases")

    sub.add_parser("score", parents=[common], help="score tiles and pick the best slice per slide")
    sub.add_parser("extract", parents=[common], help="ViT features of the best slices")
    sub.add_parser("train-ae", parents=[common], help="train the autoencoder")
    sub.add_parser("encode", parents=[common], help="write latent vectors")

    stratify = sub.add_parser("stratify", parents=[common], help="clusters, KM curves, log-rank tests, t-SNE")
    stratify.add_argument("--k", type=int, action="append", help="cluster count (repeatable)")

    sub.add_parser("classify", parents=[common], help="logistic regression, KNN and MLP on the latent vectors")

    explain = sub.add_parser("explain", parents=[common], help="GradientSHAP attributions and overlays")
    explain.add_argument("--cases", nargs="+", help="case ids (default: longest and shortest uncensored)")

    run = sub.add_parser("run", parents=[common], help="all stages in order, with manifest.json")
    run.add_argument("--k", type=int, action="append", help="cluster count (repeatable)")
    run.add_argument("--cases", nargs="+", help="case ids to explain")
    return parser


def resolve_config(args) -> PipelineConfig:
    config = load_pipeline_config(args.config)
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.workers is not None:
        if args.workers < 1:
            raise UsageError("-j must be at least 1")
        updates["workers"] = args.workers
    return config.model_copy(update=updates) if updates else config


def run_synth(args, config: PipelineConfig) -> None:
    overrides = {
        name: value
        for name, value in (
            ("k", args.k), ("n", args.n), ("separation", args.separation), ("censoring_rate", args.censoring_rate),
        )
        if value is not None
    }
    synth = config.synth.model_validate({**config.synth.model_dump(), **overrides})
    out_dir = get_settings().output_dir(args.out)
    cmd_synth(synth, out_dir, config.seed)


def dispatch(args) -> None:
    config = resolve_config(args)
    if args.command == "synth":
        run_synth(args, config)
        return

    out_dir = get_settings().output_dir(args.out or config.paths.out_dir)
    service = PipelineService(config, out_dir, config.workers)
    if args.command == "score":
        service.cmd_score_slides()
    elif args.command == "extract":
        service.cmd_extract()
    elif args.command == "train-ae":
        service.cmd_train_ae()
    elif args.command == "encode":
        service.cmd_encode()
    elif args.command == "stratify":
        service.cmd_stratify(args.k)
    elif args.command == "classify":
        service.cmd_classify()
    elif args.command == "explain":
        service.cmd_explain(args.cases)
    elif args.command == "run":
        service.cmd_run(args.k, args.cases)


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level or get_settings().log_level)

    try:
        dispatch(args)
    except PathXError as e:
        logger.error(f"❌ {e}")
        return e.exit_code
    except ValueError as e:
        # out-of-range CLI overrides rejected by the config models
        logger.error(f"❌ {e}")
        return EXIT_USAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())
