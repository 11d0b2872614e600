"""Run the drift-collapse scenario: baseline distillation vs reliability
scaling with the dynamic budget, then print the comparison table.

Usage: python3 scripts/run_collapse.py [--out runs/collapse] [--steps N]
"""

import argparse
import sys

from prune_opd.harness import compare, config_from_dict, run


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/collapse")
    parser.add_argument("--steps", type=int, default=None)
    args = parser.parse_args()

    dirs = []
    for mode in ("opd_baseline", "prune_opd"):
        raw = {"preset": "collapse", "mode": mode, "output_dir": f"{args.out}/{mode}"}
        if args.steps is not None:
            raw["steps"] = args.steps
        summary = run(config_from_dict(raw))
        dirs.append(raw["output_dir"])
        print(f"{mode}: final_kl={summary['final_kl']:.4f} "
              f"tokens_scored={summary['tokens_scored']}")
    _, table, _ = compare(dirs)
    print(table, end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
