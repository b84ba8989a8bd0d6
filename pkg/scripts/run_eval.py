#!/usr/bin/env python3
"""Camera-ablation evaluation of the nearest-neighbor baseline.

Fits the policy on every .tri episode in the dataset directory, rolls it
out under all seven camera configurations, and writes eval_<task>.json
and eval_<task>.txt next to the data (or under --out).
"""

import argparse
import sys
from pathlib import Path

from tririg.cli import main as cli_main


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("dataset", type=Path)
    ap.add_argument("--rollouts", type=int, default=50)
    ap.add_argument("--configs", default=None,
                    help="comma-separated subset of the seven configurations")
    ap.add_argument("--out", type=Path, default=None)
    args = ap.parse_args()

    argv = ["eval", str(args.dataset), "--rollouts", str(args.rollouts)]
    if args.configs is not None:
        argv += ["--configs", args.configs]
    if args.out is not None:
        argv += ["--out", str(args.out)]
    return cli_main(argv)


if __name__ == "__main__":
    sys.exit(main())
