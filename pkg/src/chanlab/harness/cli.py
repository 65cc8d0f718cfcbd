"""Command-line entry point: ``chanlab <experiment> [options]``."""

import argparse
import logging
import os
import sys

from chanlab.harness.config import EXPERIMENTS, ConfigError, dump_config, parse_config
from chanlab.harness.experiments import NumericalFailure, run_experiment, write_results

EXIT_CONFIG, EXIT_NUMERICAL = 1, 2


def _list(cast):
    def parse(text):
        try:
            return [cast(t) for t in text.split(",") if t.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad list {text!r}") from None

    return parse


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; that code is reserved for numerical failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="chanlab", description="Run a channel-estimation sweep and write a results CSV.")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", metavar="PATH", help="key = value file; flags override its values")
    p.add_argument("--d", type=int, help="antennas")
    p.add_argument("--snr-db", type=_list(float), metavar="LIST", help="comma-separated SNR grid in dB")
    p.add_argument("--eta", type=float)
    p.add_argument("--eta-grid", type=_list(float), metavar="LIST")
    p.add_argument("--widths", type=_list(int), metavar="LIST")
    p.add_argument("--sizes", type=_list(int), metavar="LIST")
    p.add_argument("--train-size", type=int)
    p.add_argument("--test-size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--mc-trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", type=int, help="average each point over this many replicates")
    p.add_argument("--threads", type=int)
    p.add_argument("--out", dest="out_path", metavar="PATH")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def config_echo_path(out_path):
    root, _ = os.path.splitext(out_path)
    return root + ".config"


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    overrides = {k: v for k, v in vars(args).items() if k not in ("config", "verbose")}
    try:
        cfg = parse_config(args.config, overrides)
    except ConfigError as exc:
        print(f"chanlab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        rows = run_experiment(cfg)
    except NumericalFailure as exc:
        print(f"chanlab: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    write_results(rows, cfg.out_path)
    with open(config_echo_path(cfg.out_path), "w", encoding="utf-8", newline="") as fh:
        fh.write(dump_config(cfg))
    print(f"wrote {len(rows)} rows to {cfg.out_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
