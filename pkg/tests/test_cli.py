import json
import subprocess
import sys
from pathlib import Path

import pytest

from mtlab.checks import REGISTRY
from mtlab.cli import check_seed, main

ROOT = Path(__file__).resolve().parents[1]
CHEAP = """seed: 99
model: {sites: 6, nmax: 2, coupling: [[0.1, 0.0], [0.05, 0.0]]}
checks:
  - name: unitarity
  - name: nelson_bounds
    params: {states: 10}
  - name: trotter_convergence
  - name: toy_counterexample
"""


def _write(tmp_path, text):
    p = tmp_path / "s.yaml"
    p.write_text(text)
    return p


def test_smoke_scenario_exits_zero_with_one_csv(tmp_path):
    out = tmp_path / "rep"
    assert main(["run", str(ROOT / "scenarios" / "smoke.yaml"), "--out", str(out)]) == 0
    assert [p.name for p in out.glob("*.csv")] == ["00_unitarity.csv"]
    summary = json.loads((out / "summary.json").read_text())
    assert summary["all_passed"] is True and summary["seed"] == 12345


def test_unknown_check_fails_before_running(tmp_path, capsys):
    out = tmp_path / "rep"
    code = main(["run", str(_write(tmp_path, "checks: [unitarity, nope]")), "--out", str(out)])
    assert code != 0
    assert "unknown check" in capsys.readouterr().err
    assert not out.exists()


def test_model_validation_failure_exits_nonzero(tmp_path, capsys):
    p = _write(tmp_path, "model: {sites: 4, delta: 1.5, max_time: 1}\nchecks: [unitarity]")
    assert main(["run", str(p), "--out", str(tmp_path / "r")]) == 2
    assert "wraparound" in capsys.readouterr().err


def test_failing_check_is_recorded_not_thrown(tmp_path):
    p = _write(tmp_path, "checks: [{name: unitarity, tolerance: 1e-30}]")
    out = tmp_path / "r"
    assert main(["run", str(p), "--out", str(out)]) == 1
    entry = json.loads((out / "summary.json").read_text())["checks"][0]
    assert entry["status"] == "fail"


def test_list_checks_names_every_criterion(capsys):
    assert main(["list-checks", "--json"]) == 0
    names = {e["name"] for e in json.loads(capsys.readouterr().out)}
    assert names == {"unitarity", "trotter_convergence", "nelson_bounds", "support_growth", "green_function",
                      "path_independence", "pde_residual", "commutator", "support4", "symmetry", "hat_domain",
                      "current_balance", "toy_counterexample"}
    assert names == set(REGISTRY)


def test_list_checks_text(capsys):
    main(["list-checks"])
    text = capsys.readouterr().out
    assert all(name in text for name in REGISTRY)


def test_outputs_are_bit_identical_across_runs(tmp_path):
    p = _write(tmp_path, CHEAP)
    main(["run", str(p), "--out", str(tmp_path / "a")])
    main(["run", str(p), "--out", str(tmp_path / "b")])
    files = sorted(x.name for x in (tmp_path / "a").glob("*.csv"))
    assert len(files) == 4
    for name in files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_override_changes_random_draws(tmp_path):
    p = _write(tmp_path, CHEAP)
    main(["run", str(p), "--out", str(tmp_path / "a"), "--only", "unitarity"])
    main(["run", str(p), "--out", str(tmp_path / "b"), "--only", "unitarity", "--seed", "100"])
    a = json.loads((tmp_path / "a" / "summary.json").read_text())
    b = json.loads((tmp_path / "b" / "summary.json").read_text())
    assert (a["seed"], b["seed"]) == (99, 100)
    assert a["checks"][0]["measured"] != b["checks"][0]["measured"]


def test_isolated_run_matches_batch(tmp_path):
    p = _write(tmp_path, CHEAP)
    main(["run", str(p), "--out", str(tmp_path / "all")])
    for i, name in enumerate(["unitarity", "nelson_bounds", "trotter_convergence"]):
        sub = tmp_path / name
        main(["run", str(p), "--out", str(sub), "--only", name])
        csv = f"{i:02d}_{name}.csv"
        assert (sub / csv).read_bytes() == (tmp_path / "all" / csv).read_bytes()


def test_summary_key_order_is_stable(tmp_path):
    out = tmp_path / "rep"
    main(["run", str(ROOT / "scenarios" / "smoke.yaml"), "--out", str(out)])
    summary = json.loads((out / "summary.json").read_text())
    assert list(summary) == ["seed", "all_passed", "checks"]
    assert list(summary["checks"][0]) == ["check", "status", "measured", "tolerance", "runtime", "seed", "details"]


def test_csv_uses_crlf_and_a_header(tmp_path):
    out = tmp_path / "rep"
    main(["run", str(ROOT / "scenarios" / "smoke.yaml"), "--out", str(out)])
    raw = (out / "00_unitarity.csv").read_bytes()
    assert raw.count(b"\r\n") >= 2 and b"\n" not in raw.replace(b"\r\n", b"")


def test_per_check_seed_does_not_depend_on_earlier_checks():
    a = check_seed(1, "unitarity", 0).generate_state(4)
    assert (a == check_seed(1, "unitarity", 0).generate_state(4)).all()
    assert not (a == check_seed(1, "symmetry", 0).generate_state(4)).all()


def test_toy_subcommand_writes_csv(tmp_path, capsys):
    assert main(["toy", "--nmax", "3", "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "toy_polynomials.csv").read_text().splitlines()
    assert lines[0].startswith("sector,P,P_tilde") and len(lines) == 5
    assert "N=0" in capsys.readouterr().out


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "mtlab", "list-checks"], capture_output=True, text=True,
                         cwd=tmp_path)
    assert res.returncode == 0 and "current_balance" in res.stdout
