#!/usr/bin/env python3
"""
GMNSE Lab - command-line runner
Run one experiment from a YAML config and write its outputs and manifest
"""

import argparse
import logging
import os
import sys
from typing import List, Optional

from dotenv import load_dotenv

from .gmnse_integration.errors import GmnseError
from .gmnse_integration.logging_wrapper import setup_gmnse_logging
from .models.config_model import EXPERIMENTS, ExperimentConfig, load_config

# Load environment variables from .env file
script_dir = os.path.dirname(os.path.abspath(__file__))
project_root = os.path.dirname(script_dir)
env_path = os.path.join(project_root, '.env')

logger = logging.getLogger("gmnse")


def build_parser() -> argparse.ArgumentParser:
    """One subcommand per experiment, all sharing the same flags"""
    parser = argparse.ArgumentParser(
        prog="gmnse", description="Globally modified Navier-Stokes simulator and estimate checker"
    )
    subcommands = parser.add_subparsers(dest="experiment", required=True, metavar="EXPERIMENT")
    for name in EXPERIMENTS:
        sub = subcommands.add_parser(name, help=f"run the '{name}' experiment")
        sub.add_argument("--config", help="experiment YAML file (defaults apply when omitted)")
        sub.add_argument("--output", help="output directory (overrides run.output_dir)")
        sub.add_argument("--seed", type=int, help="single seed (overrides run.seeds)")
        sub.add_argument("--threads", type=int, help="worker threads for ensemble members")
        sub.add_argument("--resolution-override", type=int, help="Fourier modes per axis (overrides params.resolution)")
        sub.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR")
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """File (or defaults), overridden by environment, overridden by flags"""
    config = load_config(args.config) if args.config else ExperimentConfig()
    threads = args.threads
    if threads is None and os.getenv('GMNSE_THREADS'):
        threads = int(os.getenv('GMNSE_THREADS'))
    output = args.output or os.getenv('GMNSE_OUTPUT_DIR')
    return config.with_overrides(
        experiment=args.experiment,
        output_dir=output,
        seed=args.seed,
        threads=threads,
        resolution=args.resolution_override,
    )


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point; returns the process exit code"""
    load_dotenv(env_path)
    args = build_parser().parse_args(argv)
    setup_gmnse_logging(args.log_level or os.getenv('GMNSE_LOG_LEVEL', 'INFO'))

    from .services.experiment_service import ExperimentService

    try:
        config = resolve_config(args)
        service = ExperimentService(config)
        logger.info(f"🚀 Starting GMNSE experiment '{config.experiment}'")
        logger.info(f"📁 Output directory: {service.output_dir}")
        manifest = service.run()
        logger.info(f"✅ Done: {sum(len(v) for v in manifest.outputs.values())} outputs listed in manifest.json")
        return 0
    except GmnseError as e:
        logger.error(f"❌ {e.category.capitalize()} error: {e}")
        return e.exit_code
    except Exception as e:
        logger.error(f"❌ Unexpected error: {e}")
        return 1


if __name__ == '__main__':
    sys.exit(main())
