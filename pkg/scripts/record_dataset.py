#!/usr/bin/env python3
"""Collect demonstration datasets for every task in one go.

Writes one subdirectory per task under --out, each with its own
summary.json, using the same code path as `tririg record`.
"""

import argparse
import sys
from pathlib import Path

from tririg.cli import main as cli_main
from tririg.tasks import TASK_NAMES


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--tasks", default=",".join(TASK_NAMES),
                    help="comma-separated task names")
    ap.add_argument("--episodes", type=int, default=50)
    ap.add_argument("--noise-std", default=None,
                    help="operator tremor; single value or 'trans,rot'")
    ap.add_argument("--cameras", default=None,
                    help="comma-separated camera ids (default: all six)")
    ap.add_argument("--out", type=Path, default=Path("data"))
    args = ap.parse_args()

    for task in [t.strip() for t in args.tasks.split(",") if t.strip()]:
        argv = ["record", "--task", task, "--episodes", str(args.episodes),
                "--out", str(args.out / task)]
        if args.noise_std is not None:
            argv += ["--noise-std", args.noise_std]
        if args.cameras is not None:
            argv += ["--cameras", args.cameras]
        rc = cli_main(argv)
        if rc != 0:
            return rc
    return 0


if __name__ == "__main__":
    sys.exit(main())
