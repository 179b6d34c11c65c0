#!/usr/bin/env python3
"""Run the 22-robot circle-swap comparison and print the headline numbers.

Equivalent to `robustcbf run scenarios/circle22.yaml --mode both`, with the
comparison echoed to stdout.  Expect a few minutes of wall time for the full
20-iteration experiment; use --iterations to shorten exploratory runs.
"""

import argparse
import json
import sys
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from robustcbf.cli import run_command  # noqa: E402


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--scenario", default=str(REPO / "scenarios" / "circle22.yaml")
    )
    parser.add_argument("--out", default=str(REPO / "out" / "circle22"))
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--seed", type=int, default=None)
    args = parser.parse_args()

    code = run_command(
        args.scenario, args.out, mode="both", seed=args.seed, jobs=args.jobs
    )
    if code != 0:
        return code

    compare = json.loads((Path(args.out) / "compare.json").read_text())
    print(json.dumps(compare, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
