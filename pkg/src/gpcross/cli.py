"""Command line entry point: ``gpcross <command> --scenario FILE --out DIR``."""

from __future__ import annotations

import argparse
import logging
import sys

from .reports import EXIT_FAIL, EXIT_OK, RunSettings, run_scenario, verify_suite

COMMANDS = {
    "project": "cone projection and certificates (projection.json)",
    "bounds": "projection plus bounds without simulation (bounds.csv)",
    "simulate": "MC estimates for each c (simulation.json, bounds.csv)",
    "sandwich": "full run: projection, bounds, MC sandwich check",
    "transform": "map a half-line scenario onto the bridge (transform.csv)",
    "verify": "built-in oracle battery",
}


def _u64(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def build_parser():
    p = argparse.ArgumentParser(prog="gpcross", description="Bounds for boundary non-crossing probabilities of Gaussian processes.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in COMMANDS.items():
        s = sub.add_parser(name, help=help_)
        if name != "verify":
            s.add_argument("--scenario", required=True, help="scenario JSON file")
            s.add_argument("--out", required=True, help="output directory")
            s.add_argument("--grid", type=_positive, help="analysis grid nodes per axis")
            s.add_argument("--mc-grid", type=_positive, dest="mc_grid", help="simulation grid nodes per axis")
        s.add_argument("--seed", type=_u64)
        s.add_argument("--replicates", type=_positive)
        if name == "verify":
            s.add_argument("--kernel-table", dest="kernel_table", help="CSV table of exp(-(t-s)) for the factorization item")
            s.add_argument("--out", help="write the item list as JSON here")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "verify":
        ok, items = verify_suite(
            replicates=args.replicates or 100_000, seed=args.seed or 0, kernel_table=args.kernel_table
        )
        if args.out:
            from pathlib import Path

            from .reports import write_json

            Path(args.out).mkdir(parents=True, exist_ok=True)
            write_json(items, Path(args.out) / "verify.json")
        return EXIT_OK if ok else EXIT_FAIL
    settings = RunSettings(seed=args.seed, replicates=args.replicates, grid=args.grid, mc_grid=args.mc_grid)
    code = run_scenario(args.scenario, args.out, command=args.command, settings=settings)
    if code == EXIT_OK:
        print(f"{args.command}: ok, outputs in {args.out}")
    return code


if __name__ == "__main__":
    sys.exit(main())
