"""Command-line entry point.

  opd-shim run --from-dump <in.npz> --to-dump <out.npz> --config <cfg.json>

Loads a framework dump, pushes it through the ``prune-opd scale`` tool, and
writes an ``.npz`` with ``scaled_rewards`` [B, T, k] and ``loss_weight``
[B, T]. Exit codes mirror the scaling CLI: 0 success, 2 configuration or
input error, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import sys
import tempfile

import numpy as np

from .convert import scale_dump
from .dump import FrameworkDump, ShimError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="opd-shim")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="scale one framework dump")
    p_run.add_argument("--from-dump", required=True, help="input .npz dump")
    p_run.add_argument("--to-dump", required=True, help="output .npz with scaled rewards")
    p_run.add_argument("--config", required=True, help="JSON config with compat./reliability. keys")
    p_run.add_argument("--expect-k", type=int, default=None,
                       help="reject dumps recorded under a different top-k")
    return parser


def _cmd_run(args) -> int:
    dump = FrameworkDump.load(args.from_dump)
    with tempfile.TemporaryDirectory(prefix="opd-shim-") as workdir:
        scaled, weights = scale_dump(dump, args.config, workdir, expected_k=args.expect_k)
    np.savez(args.to_dump, scaled_rewards=scaled, loss_weight=weights)
    sys.stdout.write(
        f"scaled {dump.batch_size} rollouts x {dump.length} positions -> {args.to_dump}\n"
    )
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK

    try:
        return _cmd_run(args)
    except ShimError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_CONFIG
    except OSError as exc:
        sys.stderr.write(f"i/o error: {exc}\n")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
