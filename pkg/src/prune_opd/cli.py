"""Command-line entry point.

Subcommands:
  run      execute an experiment from a JSON config file
  compare  tabulate final KL / scored tokens across finished runs
  weights  emit strided loss-weight-by-position curves for a run
  scale    apply reliability scaling to a serialized trace file

Exit codes: 0 success, 2 configuration or usage error, 3 I/O failure.
``PRUNE_OPD_LOG`` sets the log level (e.g. DEBUG, INFO, WARNING).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import harness
from .errors import PruneOpdError, TraceParseError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prune-opd")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one configured experiment")
    p_run.add_argument("--config", required=True, help="JSON config file (flat dotted keys)")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")

    p_cmp = sub.add_parser("compare", help="compare finished runs")
    p_cmp.add_argument("run_dirs", nargs="*", help="run directories (>= 2)")
    p_cmp.add_argument("--out", default=None, help="write the comparison CSV here")

    p_w = sub.add_parser("weights", help="emit loss-weight-by-position curves")
    p_w.add_argument("run_dir")
    p_w.add_argument("--stride", type=int, default=20)

    p_s = sub.add_parser("scale", help="scale rewards in a trace file")
    p_s.add_argument("--traces", required=True, help="input trace file")
    p_s.add_argument("--out", required=True, help="output trace file with scaled rewards")
    p_s.add_argument("--config", required=True, help="JSON config with compat.*/reliability.* keys")
    return parser


def _load_json(path: str) -> dict:
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise TraceParseError(f"config {path} is not valid JSON: {exc}") from exc


def _cmd_run(args) -> int:
    raw = _load_json(args.config)
    raw["output_dir"] = args.out
    if args.seed is not None:
        raw["seed"] = args.seed
    config = harness.config_from_dict(raw)
    summary = harness.run(config)
    json.dump(summary, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return EXIT_OK


def _cmd_compare(args) -> int:
    rows, text, csv_text = harness.compare(args.run_dirs)
    del rows
    if args.out:
        with open(args.out, "w", newline="\n") as fh:
            fh.write(csv_text)
    sys.stdout.write(text)
    return EXIT_OK


def _cmd_weights(args) -> int:
    path = harness.emit_weight_profile(args.run_dir, args.stride)
    sys.stdout.write(f"{path}\n")
    return EXIT_OK


def _cmd_scale(args) -> int:
    raw = _load_json(args.config)
    # tolerate a full experiment config: only compat.* / reliability.* matter
    kept = {k: v for k, v in raw.items() if k.split(".")[0] in ("compat", "reliability", "preset")}
    kept.setdefault("mode", "prune_opd")
    kept.setdefault("scenario.target_overlap_curve", [[0, 1.0]])
    kept.setdefault("scenario.seed", 0)
    kept.setdefault("scenario.prompt_length", 0)
    kept.setdefault("scenario.max_length", 1)
    if "compat.k" in kept:
        kept.setdefault("scenario.k", kept["compat.k"])
        kept.setdefault("scenario.vocab_size", max(64, 2 * int(kept["compat.k"])))
    config = harness.config_from_dict(kept)
    count = harness.scale_trace_file(args.traces, args.out, config.compat, config.reliability)
    sys.stdout.write(f"scaled {count} rollouts -> {args.out}\n")
    return EXIT_OK


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("PRUNE_OPD_LOG", "WARNING").upper())
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK

    handler = {
        "run": _cmd_run,
        "compare": _cmd_compare,
        "weights": _cmd_weights,
        "scale": _cmd_scale,
    }[args.command]
    try:
        return handler(args)
    except PruneOpdError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_CONFIG
    except OSError as exc:
        sys.stderr.write(f"i/o error: {exc}\n")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
