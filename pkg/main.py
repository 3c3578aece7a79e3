#!/usr/bin/env python3
"""
Lookdown simulator command line

    python main.py simulate --config configs/moran.json [--seed S] [--reps R] [--workers W] [--out DIR]
    python main.py verify SUITE [--config FILE] [--adversarial] [--seed S] [--reps R] [--workers W] [--out DIR]
    python main.py genealogy RUN_DIR --n N [--out DIR]
    python main.py identities [--seed S] [--reps R] [--out DIR]

Exit codes: 0 success, 1 failed checks, 2 configuration error, 3 particle cap.
"""
import argparse
import logging
import sys
from typing import List, Optional

from commands.console import print_error
from commands.genealogy import genealogy
from commands.identities import identities
from commands.simulate import simulate
from commands.verify import verify
from config import EXIT_CONFIG_ERROR, EXIT_PARTICLE_CAP, LOG_LEVEL, VERIFY_SUITES, __version__
from utils.engine import ParticleCapExceeded

logger = logging.getLogger(__name__)


def _add_overrides(parser: argparse.ArgumentParser, workers: bool = True):
    parser.add_argument("--seed", type=int, help="Override the master seed")
    parser.add_argument("--reps", type=int, help="Override the replicate count")
    if workers:
        parser.add_argument("--workers", type=int, help="Worker processes (default: available cores)")
    parser.add_argument("--out", help="Output directory (default under LOOKDOWN_OUTPUT_ROOT)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lookdown", description="Lookdown particle simulator")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="Run replicates of a configured model")
    sim.add_argument("--config", required=True, help="JSON run configuration")
    _add_overrides(sim)

    ver = sub.add_parser("verify", help="Run a verification suite")
    ver.add_argument("suite", help=f"One of: {', '.join(VERIFY_SUITES)}")
    ver.add_argument("--config", help="JSON run configuration with a verify section")
    ver.add_argument("--adversarial", action="store_true", help="Swap in broken mechanisms (must fail)")
    _add_overrides(ver)

    gen = sub.add_parser("genealogy", help="Export genealogies of the lowest levels of a run")
    gen.add_argument("run_dir", help="Directory written by simulate")
    gen.add_argument("--n", type=int, required=True, dest="sample_size", help="Sample size")
    gen.add_argument("--out", help="Output directory (default: the run directory)")

    ids = sub.add_parser("identities", help="Check the Poisson random measure identities")
    _add_overrides(ids, workers=False)
    return parser


def dispatch(args: argparse.Namespace) -> int:
    if args.command == "simulate":
        return simulate(args.config, args.seed, args.reps, args.workers, args.out)
    if args.command == "verify":
        return verify(args.suite, args.config, args.seed, args.reps, args.workers, args.out, args.adversarial)
    if args.command == "genealogy":
        return genealogy(args.run_dir, args.sample_size, args.out)
    return identities(args.seed or 0, args.reps, args.out)


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(level=getattr(logging, LOG_LEVEL.upper(), logging.INFO),
                        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
    args = build_parser().parse_args(argv)
    try:
        return dispatch(args)
    except ParticleCapExceeded as e:
        print_error(str(e))
        return EXIT_PARTICLE_CAP
    except ValueError as e:
        print_error(str(e))
        return EXIT_CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())
