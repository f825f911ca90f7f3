from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mtlab.checks import REGISTRY, catalog
from mtlab.fock import norm
from mtlab.model import ModelError, build_model
from mtlab.scenario import (CheckSpec, Scenario, ScenarioError, build_initial_state, load_scenario, loads_scenario,
                            model_for, parse_scenario)

ROOT = Path(__file__).resolve().parents[1]


def test_shipped_scenarios_parse_and_name_registered_checks():
    for path in (ROOT / "scenarios").glob("*.yaml"):
        sc = load_scenario(path)
        assert sc.checks
        for spec in sc.checks:
            assert spec.name in REGISTRY
            model_for(sc, spec)


def test_acceptance_scenario_covers_the_catalog_in_order():
    sc = load_scenario(ROOT / "scenarios" / "acceptance.yaml")
    assert sorted(c.name for c in sc.checks) == sorted(REGISTRY)


def test_string_check_shorthand():
    sc = loads_scenario("checks: [unitarity, symmetry]")
    assert [c.name for c in sc.checks] == ["unitarity", "symmetry"]
    assert sc.checks[0].params == {} and sc.checks[0].tolerance is None


@pytest.mark.parametrize("tol", [0, -1e-3])
def test_nonpositive_tolerance_rejected(tol):
    with pytest.raises(ScenarioError, match="positive"):
        loads_scenario(f"checks: [{{name: unitarity, tolerance: {tol}}}]")


def test_bad_inputs_rejected():
    with pytest.raises(ScenarioError, match="mapping"):
        parse_scenario([1, 2])
    with pytest.raises(ScenarioError, match="no name"):
        loads_scenario("checks: [{params: {t: 1}}]")
    with pytest.raises(ScenarioError, match="number"):
        loads_scenario("checks: [{name: unitarity, tolerance: tiny}]")


def test_wraparound_budget_checked_when_building_the_check_model():
    sc = loads_scenario("model: {sites: 8, delta: 1.5, max_time: 2.5}\nchecks: [unitarity]")
    with pytest.raises(ModelError, match="wraparound"):
        model_for(sc, sc.checks[0])


def test_check_model_overrides_merge_onto_scenario_model():
    sc = loads_scenario("model: {sites: 8, nmax: 2}\nchecks: [{name: unitarity, model: {sites: 12}}]")
    m = model_for(sc, sc.checks[0])
    assert (m.sites, m.nmax) == (12, 2)


def test_catalog_round_trips_through_the_parser():
    entries = [CheckSpec(e["name"], dict(e["params"]), e["tolerance"]) for e in catalog()]
    sc = Scenario(model={"sites": 8}, checks=entries, output="out", seed=7)
    once = loads_scenario(sc.dump())
    assert once.to_dict() == sc.to_dict()
    assert loads_scenario(once.dump()).to_dict() == once.to_dict()


def test_acceptance_scenario_round_trips():
    sc = load_scenario(ROOT / "scenarios" / "acceptance.yaml")
    assert loads_scenario(sc.dump()).to_dict() == sc.to_dict()


_names = st.sampled_from(sorted(REGISTRY))
_tols = st.floats(min_value=1e-14, max_value=1.0, allow_nan=False)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(_names, st.one_of(st.none(), _tols)), min_size=1, max_size=6),
       st.integers(0, 2 ** 63 - 1))
def test_round_trip_property(checks, seed):
    sc = Scenario(checks=[CheckSpec(n, {}, t) for n, t in checks], seed=seed)
    assert loads_scenario(sc.dump()).to_dict() == sc.to_dict()


def test_random_recipe_is_seeded(model):
    a = build_initial_state(model, {"recipe": "random"}, np.random.default_rng(5))
    b = build_initial_state(model, {"recipe": "random"}, np.random.default_rng(5))
    assert all(np.array_equal(x, y) for x, y in zip(a.sectors, b.sectors))
    assert norm(a) == pytest.approx(1.0)


def test_packet_and_product_recipes(model):
    pk = build_initial_state(model, {"recipe": "packet", "fermions": [{"center": 3, "radius": 2.0}]}, None)
    assert norm(pk) > 0
    assert all(not np.any(s) for s in pk.sectors[1:])
    pr = build_initial_state(model, {"recipe": "product", "fermions": [{"center": 3}], "bosons": [{"center": 6}]},
                             None)
    assert np.any(pr.sectors[1]) and not np.any(pr.sectors[0])


def test_recipe_errors(model):
    with pytest.raises(ScenarioError, match="fermion packets"):
        build_initial_state(model, {"recipe": "packet", "fermions": [{}, {}]}, None)
    with pytest.raises(ScenarioError, match="unknown initial-state recipe"):
        build_initial_state(model, {"recipe": "vacuum"}, None)
