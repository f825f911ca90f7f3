"""Scenario files: model section, initial-state recipe, ordered list of checks."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .fock import FockState, Space, full_space, orbital_packet, product_state, random_state
from .model import LatticeModel, build_model


class ScenarioError(ValueError):
    pass


@dataclass
class CheckSpec:
    name: str
    params: dict = field(default_factory=dict)
    tolerance: float | None = None
    model: dict = field(default_factory=dict)  # overrides of the scenario model for this check
    initial_state: dict | None = None

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"name": self.name}
        if self.params:
            out["params"] = copy.deepcopy(self.params)
        if self.tolerance is not None:
            out["tolerance"] = self.tolerance
        if self.model:
            out["model"] = copy.deepcopy(self.model)
        if self.initial_state is not None:
            out["initial_state"] = copy.deepcopy(self.initial_state)
        return out


@dataclass
class Scenario:
    model: dict = field(default_factory=dict)
    initial_state: dict = field(default_factory=lambda: {"recipe": "random"})
    checks: list[CheckSpec] = field(default_factory=list)
    output: str = "reports"
    seed: int = 12345

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "output": self.output,
            "model": copy.deepcopy(self.model),
            "initial_state": copy.deepcopy(self.initial_state),
            "checks": [c.to_dict() for c in self.checks],
        }

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


def _num(v, what):
    try:
        return float(v)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{what} must be a number") from exc


def parse_scenario(data: dict) -> Scenario:
    if not isinstance(data, dict):
        raise ScenarioError("scenario must be a mapping")
    checks = []
    for i, c in enumerate(data.get("checks", [])):
        if isinstance(c, str):
            c = {"name": c}
        if "name" not in c:
            raise ScenarioError(f"check #{i} has no name")
        tol = c.get("tolerance")
        if tol is not None:
            tol = _num(tol, "tolerance")
            if tol <= 0:
                raise ScenarioError("tolerances must be positive")
        checks.append(CheckSpec(str(c["name"]), dict(c.get("params") or {}), tol, dict(c.get("model") or {}),
                                c.get("initial_state")))
    return Scenario(
        model=dict(data.get("model") or {}),
        initial_state=dict(data.get("initial_state") or {"recipe": "random"}),
        checks=checks,
        output=str(data.get("output", "reports")),
        seed=int(data.get("seed", 12345)),
    )


def load_scenario(path: str | Path) -> Scenario:
    with open(path) as fh:
        return parse_scenario(yaml.safe_load(fh) or {})


def loads_scenario(text: str) -> Scenario:
    return parse_scenario(yaml.safe_load(text) or {})


def model_for(scenario: Scenario, check: CheckSpec) -> LatticeModel:
    cfg = dict(scenario.model)
    cfg.update(check.model)
    return build_model(cfg)


def build_initial_state(model: LatticeModel, recipe: dict, rng: np.random.Generator, space: Space | None = None) -> FockState:
    """Named constructors: "random", "packet" (fermion wavepackets), "product" (fermions + bosons)."""
    space = space or full_space(model)
    kind = recipe.get("recipe", "random")
    if kind == "random":
        return random_state(space, rng, symmetrized=bool(recipe.get("symmetrized", True)))
    if kind in ("packet", "product"):
        packets = recipe.get("fermions") or [{}]
        if len(packets) != space.fermions:
            raise ScenarioError(f"recipe lists {len(packets)} fermion packets, model has {space.fermions}")
        forbs = [_orbital(model, p) for p in packets]
        borbs = [_orbital(model, p) for p in recipe.get("bosons", [])] if kind == "product" else []
        return product_state(space, forbs, borbs)
    raise ScenarioError(f"unknown initial-state recipe {kind!r}")


def _orbital(model: LatticeModel, spec: dict) -> np.ndarray:
    spinor = spec.get("spinor") or [1.0] + [0.0] * (model.spin - 1)
    return orbital_packet(model, int(spec.get("center", model.sites // 2)), float(spec.get("radius", 3.0)),
                          [complex(s) for s in spinor], float(spec.get("k", 0.0)))
