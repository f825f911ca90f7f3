"""Scan the support4 outside maximum over fermion mass and margin.

Reuses the acceptance scenario's support4 entry and varies only ``mx`` and ``margin``.
The output table is what the locality-threshold analysis in the notes is based on.

    python scripts/scan_support4_tails.py --masses 1 8 50 --margins 2 4 6
"""

import argparse
import copy
import sys
from pathlib import Path

from mtlab.cli import make_context
from mtlab.checks import run_check
from mtlab.scenario import load_scenario

ROOT = Path(__file__).resolve().parents[1]


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--masses", type=float, nargs="+", default=[1.0, 8.0, 50.0])
    ap.add_argument("--margins", type=int, nargs="+", default=[2, 4, 6])
    args = ap.parse_args()
    scenario = load_scenario(ROOT / "scenarios" / "acceptance.yaml")
    index, spec = next((i, c) for i, c in enumerate(scenario.checks) if c.name == "support4")
    print(f"{'mx':>6} {'margin':>6} {'outside_max':>12} {'positive':>12}")
    for mx in args.masses:
        for margin in args.margins:
            s = copy.deepcopy(spec)
            s.model["masses"] = {**scenario.model.get("masses", {}), **s.model.get("masses", {}), "mx": mx}
            s.params["margin"] = margin
            res = run_check("support4", make_context(scenario, s, index, scenario.seed, 1))
            print(f"{mx:6g} {margin:6d} {res.measured:12.3e} {res.details['positive_control']:12.3e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
