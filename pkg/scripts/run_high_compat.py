"""Run the persistently-compatible scenario, where the budget controller
should open the budget to its maximum and prune almost nothing.

Usage: python3 scripts/run_high_compat.py [--out runs/high_compat] [--steps N]
"""

import argparse
import sys

from prune_opd.harness import compare, config_from_dict, run
from prune_opd.trace_io import read_metrics


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/high_compat")
    parser.add_argument("--steps", type=int, default=None)
    args = parser.parse_args()

    dirs = []
    for mode in ("opd_baseline", "prune_opd"):
        raw = {"preset": "high_compat", "mode": mode, "output_dir": f"{args.out}/{mode}"}
        if args.steps is not None:
            raw["steps"] = args.steps
        run(config_from_dict(raw))
        dirs.append(raw["output_dir"])
    _, table, _ = compare(dirs)
    print(table, end="")
    ms = [row.m_current for row in read_metrics(f"{dirs[1]}/metrics.csv")]
    print(f"budget trajectory: {ms[0]} -> {ms[-1]} over {len(ms)} steps")
    return 0


if __name__ == "__main__":
    sys.exit(main())
