"""Command-line runner: ``mtlab run <scenario>``, ``mtlab list-checks``, ``mtlab toy``."""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import zlib
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from . import toy
from .checks import REGISTRY, CheckContext, CheckResult, catalog, run_check
from .model import ModelError
from .scenario import CheckSpec, Scenario, ScenarioError, build_initial_state, load_scenario, model_for

THREADS_ENV = "MTLAB_THREADS"


def check_seed(seed: int, name: str, index: int) -> np.random.SeedSequence:
    """Per-check seed stream: depends on the check name and position, not on what ran before."""
    return np.random.SeedSequence([seed, zlib.crc32(name.encode()), index])


def validate(scenario: Scenario) -> None:
    """Fail before running anything: unknown names, bad models (including the wraparound budget)."""
    for spec in scenario.checks:
        if spec.name not in REGISTRY:
            raise ScenarioError(f"unknown check {spec.name!r}")
        model_for(scenario, spec)
        unknown = set(spec.params) - set(REGISTRY[spec.name].params)
        if unknown:
            raise ScenarioError(f"check {spec.name!r}: unknown parameters {sorted(unknown)}")


def make_context(scenario: Scenario, spec: CheckSpec, index: int, seed: int, threads: int) -> CheckContext:
    definition = REGISTRY[spec.name]
    params = dict(definition.params)
    params.update(spec.params)
    model = model_for(scenario, spec)
    recipe = spec.initial_state if spec.initial_state is not None else scenario.initial_state
    state_seq, check_seq = check_seed(seed, spec.name, index).spawn(2)

    def initial(m):
        # same draw for every call with the same model: checks may rebuild it
        return build_initial_state(m, recipe, np.random.default_rng(state_seq))

    tol = spec.tolerance if spec.tolerance is not None else definition.tolerance
    return CheckContext(model, params, float(tol), np.random.default_rng(check_seq), seed, initial, threads)


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (complex, np.complexfloating)):
        return repr(complex(v))
    return v


def write_csv(path: Path, rows: list[dict]) -> None:
    fields: list[str] = []
    for r in rows:
        for k in r:
            if k not in fields:
                fields.append(k)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields or ["empty"], restval="", quoting=csv.QUOTE_MINIMAL,
                           lineterminator="\r\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _cell(v) for k, v in r.items()})


def _json_safe(v):
    if isinstance(v, dict):
        return {str(k): _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    if isinstance(v, (complex, np.complexfloating)):
        return [float(v.real), float(v.imag)]
    return v


def summary_entry(res: CheckResult) -> dict:
    return {"check": res.name, "status": "pass" if res.passed else "fail", "measured": _json_safe(res.measured),
            "tolerance": res.tolerance, "runtime": round(res.runtime, 3), "seed": res.seed,
            "details": _json_safe(res.details)}


def run_scenario(scenario: Scenario, out: Path, seed: int | None = None, threads: int = 1,
                 only: Sequence[str] | None = None, log=print) -> tuple[bool, list[CheckResult]]:
    validate(scenario)
    seed = scenario.seed if seed is None else seed
    out.mkdir(parents=True, exist_ok=True)
    results = []
    for i, spec in enumerate(scenario.checks):
        if only and spec.name not in only:
            continue
        ctx = make_context(scenario, spec, i, seed, threads)
        try:
            res = run_check(spec.name, ctx)
        except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
            # a check that cannot complete is a failure of that check, not of the run
            res = CheckResult(spec.name, False, float("nan"), ctx.tolerance, [], {"error": f"{type(exc).__name__}: {exc}"},
                              0.0, seed)
        write_csv(out / f"{i:02d}_{spec.name}.csv", res.rows)
        results.append(res)
        log(f"{spec.name:20s} {'PASS' if res.passed else 'FAIL'}  measured={res.measured:.3e}  "
            f"tolerance={res.tolerance:.1e}  ({res.runtime:.1f} s)")
    summary = {"seed": seed, "all_passed": all(r.passed for r in results),
               "checks": [summary_entry(r) for r in results]}
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary["all_passed"], results


def _threads(arg: int | None) -> int:
    if arg is not None:
        return max(1, arg)
    return max(1, int(os.environ.get(THREADS_ENV, "1")))


def cmd_run(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
        out = Path(args.out or scenario.output)
        ok, _ = run_scenario(scenario, out, args.seed, _threads(args.threads), args.only)
    except (ScenarioError, ModelError, OSError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0 if ok else 1


def cmd_list(args) -> int:
    cat = catalog()
    if args.json:
        print(json.dumps(_json_safe(cat), indent=2))
    else:
        for entry in cat:
            print(f"{entry['name']}  (default tolerance {entry['tolerance']:g})")
            print(f"    {entry['description']}")
            for k, v in entry["params"].items():
                print(f"    {k}: {json.dumps(_json_safe(v))}")
    return 0


def cmd_toy(args) -> int:
    fam = toy.polynomial_recursion(args.nmax, complex(args.g_re, args.g_im))
    prof = toy.vanishing_profile(fam, threshold=args.threshold)
    rows = []
    for n in range(args.nmax + 1):
        rows.append({"sector": n, "P": str(fam.poly(n).as_expr()), "P_tilde": str(fam.poly(n, True).as_expr()),
                     "residual_zero": fam.nmax != n and toy.sector_residual_poly(fam, n).is_zero,
                     "t_star": float(prof.t_star[n])})
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        write_csv(Path(args.out) / "toy_polynomials.csv", rows)
    for r in rows:
        print(f"N={r['sector']}  t*={r['t_star']:.4g}  P={r['P']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mtlab", description="Multi-time lattice verification runner")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run every check of a scenario file")
    r.add_argument("scenario")
    r.add_argument("--out", help="report directory (default: the scenario's output entry)")
    r.add_argument("--seed", type=int, help="override the scenario seed")
    r.add_argument("--threads", type=int, help=f"parallel target scans (default ${THREADS_ENV} or 1)")
    r.add_argument("--only", nargs="+", help="run only these checks")
    r.set_defaults(func=cmd_run)
    ls = sub.add_parser("list-checks", help="print the check catalog with default parameters")
    ls.add_argument("--json", action="store_true")
    ls.set_defaults(func=cmd_list)
    t = sub.add_parser("toy", help="print the sector-chain polynomials and vanishing times")
    t.add_argument("--nmax", type=int, default=4)
    t.add_argument("--g-re", type=float, default=0.5)
    t.add_argument("--g-im", type=float, default=0.25)
    t.add_argument("--threshold", type=float, default=1e-12)
    t.add_argument("--out")
    t.set_defaults(func=cmd_toy)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
