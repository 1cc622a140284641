"""Command-line entry point: ``kgflow {svgd,bbvi,compare,ganflow} --config PATH``.

Exit codes: 0 success, 1 configuration error, 2 numerical failure.
"""

import argparse
import sys

from .config import SUBCOMMANDS, load_config
from .errors import ConfigError, KGFlowError


def build_parser():
    parser = argparse.ArgumentParser(
        prog="kgflow",
        description="SVGD, BBVI and kernel-gradient-flow experiments.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    helps = {
        "svgd": "run SVGD particles on the target",
        "bbvi": "run BBVI on the Gaussian family",
        "compare": "run BBVI and SVGD with the Gaussian NTK kernel side by side",
        "ganflow": "run the minimax-GAN kernel gradient flow toward the target",
    }
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", required=True, help="TOML config file")
        p.add_argument("--output", default=None, help="output directory (overrides output_dir)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--plot", action="store_true", default=None, help="also write figure.svg")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, subcommand=args.subcommand, seed=args.seed,
                             emit_plot=args.plot, output_dir=args.output)
        if config.output_dir is None:
            raise ConfigError("output_dir: give --output DIR or set output_dir in the config")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    from .experiments import run_experiment

    try:
        result = run_experiment(config)
    except KGFlowError as exc:
        step = getattr(exc, "step_index", None)
        where = f" at step {step}" if step is not None else ""
        print(f"numerical failure{where}: {exc}", file=sys.stderr)
        return 2
    for path in result.files:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
