"""Command-line entry point: ``augment``, ``train-demo`` and ``noise-compare``.

Exit codes: 0 success (per-file failures allowed while one file succeeds),
1 usage or parameter error, 2 I/O or unreadable input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import build_config, load_config
from .errors import (
    DegenerateInput,
    FormatError,
    IoError,
    NumericalError,
    ParamError,
    SarViewsError,
    UsageError,
)
from .pipeline import run_augment, run_noise_compare, run_train_demo

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERICAL = 0, 1, 2, 3

log = logging.getLogger("sarviews")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _lambda_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="flat key = value config file")
    common.add_argument("--seed", type=lambda s: int(s, 0), help="64-bit unsigned run seed")
    common.add_argument("--output", metavar="DIR", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="sarviews", description="Speckle and semantic-patch augmentation for grayscale SAR-like images, "
                                                 "plus a toy two-model training demo.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    aug = sub.add_parser("augment", parents=[common], help="write noise views and semantic patches per image")
    aug.add_argument("--input", metavar="DIR", help="directory of .pgm/.png images")
    aug.add_argument("--views", type=int, help="noise views per image")
    aug.add_argument("--workers", type=int, help="parallel file workers")

    train = sub.add_parser("train-demo", parents=[common], help="toy two-model training with probes")
    train.add_argument("--lambda2", type=_lambda_list, help="mutual-learning weight(s), e.g. 0,0.5,1")
    train.add_argument("--steps", type=int, help="training steps per run")

    cmp_ = sub.add_parser("noise-compare", parents=[common], help="compare speckle variants on one image")
    cmp_.add_argument("--input", metavar="PATH", help="image file")
    return parser


def _overrides(args) -> dict:
    keys = ("seed", "output", "input", "views", "workers", "lambda2", "steps")
    return {k: getattr(args, k, None) for k in keys}


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        file_values = load_config(args.config) if args.config else {}
        cfg = build_config(file_values, _overrides(args))
        if args.command == "augment":
            manifest = run_augment(cfg)
            totals = manifest["totals"]
            print(json.dumps(totals, sort_keys=True))
            return EXIT_OK if totals["succeeded"] > 0 else EXIT_IO
        if args.command == "train-demo":
            for report in run_train_demo(cfg):
                s = report.summary()
                print(f"lambda2={report.config['lambda2']:g} knn {s['knn_random']:.3f} -> {s['knn']} "
                      f"linear {s['linear_random']:.3f} -> {s['linear']}")
            return EXIT_OK
        report = run_noise_compare(cfg)
        print(json.dumps({k: {m: v[m] for m in ("ratio_mean", "ratio_std", "sigma_prime_variance")}
                          for k, v in report["variants"].items()}, sort_keys=True))
        return EXIT_OK
    except (UsageError, ParamError) as exc:
        print(f"sarviews: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IoError, FormatError, DegenerateInput) as exc:
        print(f"sarviews: input/output error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericalError as exc:
        print(f"sarviews: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SarViewsError as exc:
        print(f"sarviews: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main(argv=None):
    sys.exit(run(argv))
