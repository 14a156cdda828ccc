"""Command line entry point: snse2d <experiment> --config FILE [--seed-offset N] [--out DIR]."""
from __future__ import annotations

import argparse
import sys

from .errors import ConfigError
from .harness import EXIT_ERROR, EXPERIMENTS, load_config, run_experiment


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="snse2d",
        description="Numerical experiments for 2D Navier-Stokes with linear multiplicative noise.",
        epilog="exit status: 0 pass, 1 falsified criterion, 2 runtime or validation error; "
               "set SNSE2D_THREADS for the FFT thread count")
    ap.add_argument("experiment", choices=EXPERIMENTS)
    ap.add_argument("--config", required=True, help="YAML configuration file")
    ap.add_argument("--seed-offset", type=int, default=0, help="added to every noise seed")
    ap.add_argument("--out", default=None, help="output directory (overrides output_dir)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.experiment, args.seed_offset, args.out)
    except ConfigError as exc:
        print(f"snse2d: {exc}", file=sys.stderr)
        return EXIT_ERROR
    report = run_experiment(cfg)
    for v in report.verdicts:
        print(v)
    if report.error:
        print(f"snse2d: error: {report.error}", file=sys.stderr)
    print(f"config {report.config_hash[:12]}  wall {report.wall_time:.1f}s  "
          f"artifacts in {cfg.output_dir}")
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
