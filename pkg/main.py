"""
Command-line driver for the RNS analog accelerator workbench.

Usage:
    python main.py <subcommand> [--config PATH] [--seed N] [--out DIR] [--excel] [--verbose]
    python main.py run --config PATH

Subcommands: dot-error, energy, perr-curve, rrns-mc, noise-sweep, train,
infer, hybrid-check, verify.

Exit codes:
  0  experiment finished (all verify suites passed)
  1  experiment failed or a verify suite failed
  2  invalid configuration
"""
import argparse
import logging
import os
import sys
from typing import List, Optional

from config import EXPERIMENT_NAMES, apply_overrides, config_from_dict, load_config, load_environment
from errors import ConfigInvalid, ExperimentFailed, VerificationFailed
from experiments import run_experiment
from exporters import FIELDNAMES, format_summary_table

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='rns-workbench',
        description='Residue-number-system analog accelerator experiments',
    )
    sub = parser.add_subparsers(dest='command', required=True)
    for name in ('run',) + EXPERIMENT_NAMES:
        p = sub.add_parser(name, help='run the experiment named in --config' if name == 'run' else f'{name} experiment')
        p.add_argument('--config', required=(name == 'run'), help='JSON experiment config')
        p.add_argument('--seed', type=int, help='override the config seed')
        p.add_argument('--out', help='override the output directory')
        p.add_argument('--excel', action='store_true', help='also write an .xlsx workbook')
        p.add_argument('--verbose', '-v', action='store_true', help='debug logging')
    return parser


def setup_logging(verbose: bool) -> None:
    level_name = 'DEBUG' if verbose else os.getenv('RNS_WORKBENCH_LOG_LEVEL', 'INFO').upper()
    logging.basicConfig(
        level=getattr(logging, level_name, logging.INFO),
        format="%(asctime)s [%(levelname)s] %(name)s — %(message)s",
    )


def resolve_config(args: argparse.Namespace):
    if args.config:
        cfg = load_config(args.config)
        if args.command != 'run' and cfg.experiment != args.command:
            raise ConfigInvalid(
                f"Config {args.config} is for '{cfg.experiment}', not '{args.command}'"
            )
    else:
        cfg = config_from_dict({'experiment': args.command})
    return apply_overrides(cfg, seed=args.seed, output_dir=args.out)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    load_environment()
    setup_logging(args.verbose)

    try:
        cfg = resolve_config(args)
        result = run_experiment(cfg, excel=args.excel)
    except ConfigInvalid as e:
        logger.error(f"Invalid configuration: {e}")
        return 2
    except VerificationFailed as e:
        logger.error(str(e))
        return 1
    except ExperimentFailed as e:
        logger.error(f"Experiment failed: {e}")
        return 1

    if result['console']:
        print(result['console'])
    else:
        print(format_summary_table(result['rows'], FIELDNAMES[cfg.experiment]))
    print()
    for path in result['artifacts']:
        print(f"  wrote {path}")
    return 0


if __name__ == '__main__':
    sys.exit(main())
