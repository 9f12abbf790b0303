"""sociopose command line.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
"""
import argparse
import copy
import logging
import sys

import numpy as np

from . import __version__
from .config import DEFAULTS, RunConfig, apply_override
from .errors import ConfigError, NumericalError, SocioposeError
from .pipeline import (
    run_encode,
    run_encode_grouped,
    run_features,
    run_permtest,
    run_reliability,
    run_semipartial,
    run_synth,
)
from .report import run_report

COMMANDS = {
    "features": (run_features, "clip-level pose features from joint tracks"),
    "encode": (run_encode, "ridge encoding of ratings from pose features and model layers"),
    "encode-grouped": (run_encode_grouped, "grouped ridge fusion of feature groups"),
    "semipartial": (run_semipartial, "semi-partial r of joints beyond social pose subsets"),
    "permtest": (run_permtest, "permutation tests on encoding scores"),
    "reliability": (run_reliability, "split-half reliability of rater tables"),
    "synth": (run_synth, "write a synthetic dataset with known geometry"),
    "report": (run_report, "per-figure CSVs from earlier stage outputs"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="sociopose", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="YAML or JSON run config (optional for synth)")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config value, e.g. --set seed=3")
        p.add_argument("--output", help="shortcut for --set paths.output_dir=...")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    overrides = list(args.overrides)
    if args.output:
        overrides.append(f"paths.output_dir={args.output}")
    try:
        if args.config:
            cfg = RunConfig.load(args.config, overrides)
        elif args.command == "synth":
            data = copy.deepcopy(DEFAULTS)
            for ov in overrides:
                apply_override(data, ov)
            cfg = RunConfig(data)
        else:
            raise ConfigError(f"{args.command} needs --config")
        outputs = COMMANDS[args.command][0](cfg)
    except SocioposeError as exc:
        logging.getLogger("sociopose").error("%s", exc)
        return exc.exit_code
    except np.linalg.LinAlgError as exc:
        logging.getLogger("sociopose").error("numerical failure: %s", exc)
        return NumericalError.exit_code
    for p in outputs:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
