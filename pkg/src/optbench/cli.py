"""Command-line front end.

    optbench <experiment> --config <path> [--seed N] [--out DIR] [--jobs K]

The positional experiment must agree with the config's `experiment` key (a
mismatch is treated as a config error): the command line states intent, the
config carries the details, and silent disagreement between the two is how
the wrong experiment ends up in a results directory.

Exit status: 0 on success, 1 on config/usage errors, 2 on run failure.
OPTBENCH_JOBS in the environment overrides --jobs.
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
from typing import Sequence

from .config import EXPERIMENTS, load_config
from .core import OptbenchError, ParseError, ValidationError
from .runner import run_experiment

__all__ = ["main", "build_parser"]


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; here those are config errors (1)."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="optbench",
        description=(
            "First-order stochastic optimizer benchmark: training comparisons, "
            "bias-correction ablations, online regret studies, and gradient checks."
        ),
    )
    parser.add_argument("experiment", choices=EXPERIMENTS, help="experiment kind; must match the config")
    parser.add_argument("--config", required=True, help="TOML experiment configuration")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed (and seed suite)")
    parser.add_argument("--out", default=None, help="override the config output_dir")
    parser.add_argument("--jobs", type=int, default=None, help="worker pool size (default: cores)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if cfg.experiment != args.experiment:
            raise ValidationError(
                f"config declares experiment {cfg.experiment!r} but the command "
                f"line asked for {args.experiment!r}"
            )
        if args.seed is not None:
            if args.seed < 0:
                raise ValidationError(f"--seed must be >= 0, got {args.seed}")
            cfg = dataclasses.replace(cfg, seed=args.seed, seeds=(args.seed,))
        if args.out is not None:
            cfg = dataclasses.replace(cfg, output_dir=args.out)
        if cfg.output_dir is None:
            raise ValidationError("no output directory: set output_dir in the config or pass --out")
    except (ParseError, ValidationError) as exc:
        print(f"optbench: config error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"optbench: config error: {exc}", file=sys.stderr)
        return 1

    try:
        return run_experiment(cfg, jobs=args.jobs)
    except (ParseError, ValidationError) as exc:
        # Config-level impossibilities surfaced by preflight checks.
        print(f"optbench: config error: {exc}", file=sys.stderr)
        return 1
    except OptbenchError as exc:
        print(f"optbench: run failed: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - last-resort diagnostics
        print(f"optbench: run failed: {exc!r}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
