"""Sweep the drift threshold gamma on the collapse scenario and report the
tokens-scored reduction against the unscaled baseline for each value.

Usage: python3 scripts/sweep_gamma.py [--out runs/gamma] [--gammas 0.6 0.7 ...]
"""

import argparse
import sys

from prune_opd.harness import config_from_dict, run


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/gamma")
    parser.add_argument("--gammas", type=float, nargs="+", default=[0.6, 0.7, 0.8, 0.9])
    parser.add_argument("--steps", type=int, default=None)
    args = parser.parse_args()

    def do(raw):
        if args.steps is not None:
            raw["steps"] = args.steps
        return run(config_from_dict(raw))

    base = do({"preset": "collapse", "mode": "opd_baseline",
               "output_dir": f"{args.out}/baseline"})
    print(f"baseline tokens_scored={base['tokens_scored']}")
    for gamma in args.gammas:
        summary = do({
            "preset": "collapse", "mode": "prune_opd", "compat.gamma": gamma,
            "output_dir": f"{args.out}/g{gamma}",
        })
        reduction = 100.0 * (1.0 - summary["tokens_scored"] / base["tokens_scored"])
        print(f"gamma={gamma}: tokens_scored={summary['tokens_scored']} "
              f"reduction={reduction:.2f}% final_kl={summary['final_kl']:.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
