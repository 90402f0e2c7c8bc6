"""Command-line entry point: ``nudgelearn <command> --config FILE``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

from .config import ConfigError, Kind, parse_config, with_overrides
from .experiments import PartialFailure, run
from .integrate import SimulationError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_PARTIAL = 0, 2, 3, 4


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nudgelearn",
                                 description="Nudging-based parameter learning for the Lorenz '63 system.")
    ap.add_argument("command", choices=[k.value for k in Kind])
    ap.add_argument("--config", required=True, type=Path, help="key = value experiment file")
    ap.add_argument("--out", default="out", help="output directory (default: ./out)")
    ap.add_argument("--workers", type=int, default=None, help="concurrent runs for multi-run commands")
    ap.add_argument("--matlab-compat", action="store_true",
                    help="read the true state at update steps, as the reference loop does")
    ap.add_argument("--draw-always", action="store_true",
                    help="consume noise draws even when epsilon or eta is zero")
    ap.add_argument("--hold-feedback", action="store_true",
                    help="keep nudging toward the last observation between observation times")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text = args.config.read_text(encoding="utf-8")
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        spec = parse_config(text, Kind(args.command), out=args.out, workers=args.workers)
        flags = {k: True for k in ("matlab_compat", "draw_always", "hold_feedback") if getattr(args, k)}
        if flags:
            spec = with_overrides(spec, **flags)
    except ConfigError as exc:
        print(f"{exc.code}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        files = run(spec)
    except PartialFailure as exc:
        print(f"partial failure: {exc}", file=sys.stderr)
        for f in exc.files:
            print(f)
        return EXIT_PARTIAL
    except SimulationError as exc:
        print(f"{getattr(exc, 'code', 'NUMERICAL_ABORT')}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for f in files:
        print(f)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
