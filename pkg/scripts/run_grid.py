"""Run the full method grid on one task file and aggregate a report.

Methods: bg / pr / kt / ts banks plus fp / ar rule baselines, each over a
set of seeds. Desk-scale by default (small PPO budgets so the grid finishes
on a laptop); pass --full for paper-scale budgets.

Usage:
    python scripts/run_grid.py --out out/grid [--seeds 0,1,2,3,4] [--full]
"""

import argparse
import sys
from pathlib import Path

from taskbank.cli import main as cli_main

DESK = [
    "--set", "ppo.total_env_steps=20000",
    "--set", "ppo.final_eval_steps=120",
    "--set", "sim.episode_steps=60",
    "--set", "grouping.eval_steps=120",
]


def sh(argv):
    print("+ taskbank " + " ".join(argv), flush=True)
    code = cli_main(argv)
    if code != 0:
        sys.exit(code)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out/grid")
    ap.add_argument("--seeds", default="0,1,2,3,4")
    ap.add_argument("--count", type=int, default=32)
    ap.add_argument("--archetypes", type=int, default=8)
    ap.add_argument("--n", type=int, default=8)
    ap.add_argument("--threshold", default="default",
                    help="bank method threshold (number or calibrated name)")
    ap.add_argument("--full", action="store_true",
                    help="paper-scale budgets instead of desk-scale")
    args = ap.parse_args()

    out = Path(args.out)
    tasks = out / "tasks.json"
    scale = [] if args.full else DESK

    sh(["gen-tasks", "--count", str(args.count), "--archetypes",
        str(args.archetypes), "--out", str(tasks)])

    common = ["--tasks", str(tasks), "--out", str(out),
              "--seeds", args.seeds]
    for method in ("bg", "pr", "kt"):
        sh(["build", "--method", method, "--bank-size", str(args.n),
            "--threshold", args.threshold, "--resume"] + common + scale)
    sh(["build", "--method", "ts", "--resume"] + common + scale)
    for method in ("fp", "ar"):
        sh(["baseline", "--method", method] + common + scale)

    sh(["report", "--out", str(out), "--plots"])
    print(f"done; see {out / 'report.csv'} and {out / 'summary.csv'}")


if __name__ == "__main__":
    main()
