#!/usr/bin/env python3
"""Run the teleoperation server until interrupted.

Accepts raw TCP and browser WebSocket clients on the same port. Episodes
recorded over the wire land in --out as .tri files.
"""

import argparse
import sys
from pathlib import Path

from tririg.cli import main as cli_main


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--port", type=int, default=None,
                    help="default: $TRIRIG_PORT or 8765")
    ap.add_argument("--host", default=None)
    ap.add_argument("--task", default=None,
                    help="task a session starts in (default: peg_insertion)")
    ap.add_argument("--out", type=Path, default=Path("data/live"))
    args = ap.parse_args()

    argv = ["serve", "--out", str(args.out)]
    if args.port is not None:
        argv += ["--port", str(args.port)]
    if args.host is not None:
        argv += ["--host", args.host]
    if args.task is not None:
        argv += ["--task", args.task]
    return cli_main(argv)


if __name__ == "__main__":
    sys.exit(main())
