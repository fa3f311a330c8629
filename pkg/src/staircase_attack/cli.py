"""
Command line front end.

    staircase-attack run      --config exp.cfg --out results/
    staircase-attack sweep-k  --config exp.cfg --out results/
    staircase-attack train | attack | eval  (the pipeline in separate steps)

Exit codes: 0 success, 2 config error, 3 data error, 4 runtime numeric error.
"""

import argparse
import logging
import sys

import numpy as np

from . import experiment
from .config import ConfigError, ExperimentConfig, load_config, with_seed

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4

COMMANDS = {
    "train": experiment.cmd_train,
    "attack": experiment.cmd_attack,
    "eval": experiment.cmd_eval,
    "run": experiment.run_experiment,
    "sweep-k": experiment.sweep_k,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="staircase-attack", description=__doc__.split("\n\n")[0].strip())
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="experiment config (key = value lines)")
        p.add_argument("--out", help="output directory (defaults to the config's output key)")
        p.add_argument("--seed", type=int, help="override the config's top-level seed")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _default_grid():
    from .config import parse_config

    return parse_config(
        "attack.1.name = I-FGSM\nattack.1.K = 1\n"
        "attack.2.name = I-FGS2M\nattack.2.K = 64\n"
    )


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else _default_grid()
        if args.seed is not None:
            cfg = with_seed(cfg, args.seed)
        if not isinstance(cfg, ExperimentConfig):
            raise ConfigError("bad config")
    except ConfigError as exc:
        print(f"[config] {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out or cfg.output
    try:
        with np.errstate(over="raise", invalid="raise", divide="raise"):
            COMMANDS[args.command](cfg, out)
    except experiment.StageError as exc:
        print(str(exc), file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"[config] {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
