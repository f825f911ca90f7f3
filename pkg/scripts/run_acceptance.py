"""Run the shipped acceptance scenario and print one line per criterion.

    python scripts/run_acceptance.py [--out reports/acceptance] [--only support4 ...]
"""

import argparse
import sys
from pathlib import Path

from mtlab.cli import run_scenario
from mtlab.scenario import load_scenario

ROOT = Path(__file__).resolve().parents[1]


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(ROOT / "reports" / "acceptance"))
    ap.add_argument("--only", nargs="+")
    args = ap.parse_args()
    scenario = load_scenario(ROOT / "scenarios" / "acceptance.yaml")
    names = [c.name for c in scenario.checks]
    ok, results = run_scenario(scenario, Path(args.out), only=args.only, log=lambda *_: None)
    for res in results:
        n = names.index(res.name) + 1
        print(f"criterion {n:2d} {res.name:20s} {'PASS' if res.passed else 'FAIL'}  "
              f"measured={res.measured:.3e}  tolerance={res.tolerance:.1e}  ({res.runtime:.1f} s)")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
