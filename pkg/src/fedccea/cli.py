"""Command-line entry point: `fedccea <stage> --config cfg.json [--out DIR] [--seed N]`."""

from __future__ import annotations

import argparse
import sys

from .config import parse_config, with_master_seed
from .errors import ConfigError, DependencyError
from .pipeline import STAGE_ORDER, run_stage

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DEPENDENCY = 3
EXIT_RUNTIME = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedccea",
        description="Federated-learning simulation and client-contribution valuation pipeline.",
    )
    parser.add_argument("stage", choices=(*STAGE_ORDER, "all"), help="pipeline stage to run")
    parser.add_argument("--config", required=True, help="path to the JSON run configuration")
    parser.add_argument("--out", default=None, help="output directory (overrides config)")
    parser.add_argument("--seed", type=int, default=None, help="master seed (overrides config)")
    return parser


def dispatch(stage: str, config_path: str, out_dir: str | None, seed: int | None) -> int:
    try:
        cfg = parse_config(config_path)
        if seed is not None:
            cfg = with_master_seed(cfg, seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        written = run_stage(stage, cfg, out_dir if out_dir is not None else cfg.output_dir)
    except DependencyError as exc:
        print(f"dependency error: {exc}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for path in written:
        print(path)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return dispatch(args.stage, args.config, args.out, args.seed)


if __name__ == "__main__":
    sys.exit(main())
