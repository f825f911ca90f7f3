"""Configuration-space geometry: delta-spacelike sets, partitions, grown sets."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .model import LatticeModel

Label = tuple[str, int]  # ("x", k) or ("y", l)


@dataclass(frozen=True)
class Particle:
    t: float
    site: int
    spin: int


@dataclass(frozen=True)
class SpacetimeConfiguration:
    xs: tuple[Particle, ...]
    ys: tuple[Particle, ...] = ()

    @classmethod
    def build(cls, xs: Iterable, ys: Iterable = ()) -> "SpacetimeConfiguration":
        conv = lambda p: p if isinstance(p, Particle) else Particle(float(p[0]), int(p[1]), int(p[2]))
        return cls(tuple(conv(p) for p in xs), tuple(conv(p) for p in ys))

    def labels(self) -> list[Label]:
        return [("x", k) for k in range(len(self.xs))] + [("y", l) for l in range(len(self.ys))]

    def particle(self, label: Label) -> Particle:
        return self.xs[label[1]] if label[0] == "x" else self.ys[label[1]]

    def replace(self, label: Label, **changes) -> "SpacetimeConfiguration":
        p = self.particle(label)
        q = Particle(changes.get("t", p.t), changes.get("site", p.site), changes.get("spin", p.spin))
        if label[0] == "x":
            xs = list(self.xs)
            xs[label[1]] = q
            return SpacetimeConfiguration(tuple(xs), self.ys)
        ys = list(self.ys)
        ys[label[1]] = q
        return SpacetimeConfiguration(self.xs, tuple(ys))

    def with_time(self, labels: Iterable[Label], t: float) -> "SpacetimeConfiguration":
        out = self
        for lab in labels:
            out = out.replace(lab, t=t)
        return out

    def to_records(self) -> list[dict]:
        recs = [{"species": "x", "t": p.t, "site": p.site, "spin": p.spin} for p in self.xs]
        recs += [{"species": "y", "t": p.t, "site": p.site, "spin": p.spin} for p in self.ys]
        return recs

    @classmethod
    def from_records(cls, records: Sequence[dict]) -> "SpacetimeConfiguration":
        xs = [Particle(float(r["t"]), int(r["site"]), int(r.get("spin", 0))) for r in records if r["species"] == "x"]
        ys = [Particle(float(r["t"]), int(r["site"]), int(r.get("spin", 0))) for r in records if r["species"] == "y"]
        return cls(tuple(xs), tuple(ys))


@dataclass(frozen=True)
class FamilyPartition:
    families: tuple[tuple[Label, ...], ...]
    times: tuple[float, ...]

    def family_of(self, label: Label) -> int:
        for j, fam in enumerate(self.families):
            if label in fam:
                return j
        raise KeyError(label)

    def sorted(self) -> "FamilyPartition":
        order = sorted(range(len(self.families)), key=lambda j: (self.times[j], min(self.families[j])))
        return FamilyPartition(tuple(self.families[j] for j in order), tuple(self.times[j] for j in order))


def safety_distance(a: str, b: str, model: LatticeModel) -> float:
    kinds = {a, b}
    if not kinds <= {"x", "y"}:
        raise ValueError("species must be 'x' or 'y'")
    if a == b == "x":
        return 2 * model.delta
    if a == b == "y":
        return 0.0
    return model.delta


def _pair_separated(q: SpacetimeConfiguration, la: Label, lb: Label, model: LatticeModel) -> bool:
    """Strict inequality ||dz|| > |dt| + d evaluated on exact rationals."""
    pa, pb = q.particle(la), q.particle(lb)
    d = Fraction(safety_distance(la[0], lb[0], model))
    bound = abs(Fraction(pa.t) - Fraction(pb.t)) + d
    return model.distance2_exact(pa.site, pb.site) > bound * bound


def _pair_ok(q: SpacetimeConfiguration, la: Label, lb: Label, model: LatticeModel) -> bool:
    pa, pb = q.particle(la), q.particle(lb)
    if pa.t == pb.t:
        return True  # also covers coincident boson 4-positions, whatever the spins
    return _pair_separated(q, la, lb, model)


def is_delta_spacelike(q: SpacetimeConfiguration, model: LatticeModel) -> bool:
    labs = q.labels()
    return all(_pair_ok(q, a, b, model) for i, a in enumerate(labs) for b in labs[i + 1:])


def is_hat_delta_spacelike(q: SpacetimeConfiguration, model: LatticeModel) -> bool:
    labs = [("x", k) for k in range(len(q.xs))]
    return all(_pair_ok(q, a, b, model) for i, a in enumerate(labs) for b in labs[i + 1:])


class _UnionFind:
    def __init__(self, items):
        self.parent = {i: i for i in items}

    def find(self, i):
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def finest_partition(q: SpacetimeConfiguration, model: LatticeModel, hat: bool = False,
                     check: bool = True) -> FamilyPartition:
    """Transitive closure of 'closer than the safety distance'; sorted by family time.

    With ``hat`` only x-x pairs are grouped. ``check=False`` skips domain membership so
    that deliberately violating targets can still be partitioned (merging by equal time).
    """
    member = is_hat_delta_spacelike if hat else is_delta_spacelike
    if check and not member(q, model):
        raise ValueError("configuration is not delta-spacelike")
    labs = q.labels()
    uf = _UnionFind(labs)
    for i, a in enumerate(labs):
        for b in labs[i + 1:]:
            if hat and not (a[0] == b[0] == "x"):
                continue
            pa, pb = q.particle(a), q.particle(b)
            if pa.t != pb.t:
                continue
            if not _pair_separated(q, a, b, model):
                uf.union(a, b)
    groups: dict = {}
    for lab in labs:
        groups.setdefault(uf.find(lab), []).append(lab)
    fams = [tuple(sorted(g)) for g in groups.values()]
    times = [q.particle(f[0]).t for f in fams]
    return FamilyPartition(tuple(fams), tuple(times)).sorted()


def grow(region: Iterable[int], t: float, model: LatticeModel) -> set[int]:
    """All lattice sites within Euclidean distance t (closed) of the region."""
    if t < 0:
        raise ValueError("growth time must be non-negative")
    region = set(int(s) for s in region)
    if not region:
        return set()
    t2 = Fraction(t) ** 2
    out = set()
    for y in range(model.n_sites):
        for x in region:
            if model.distance2_exact(x, y) <= t2:
                out.add(y)
                break
    return out


def grow_fast(region: Iterable[int], t: float, model: LatticeModel) -> set[int]:
    """Float version of grow used in scans; agrees with grow away from exact ties."""
    region = np.array(sorted(set(int(s) for s in region)), dtype=int)
    if region.size == 0:
        return set()
    dm = model.distance_matrix()[region]
    return set(np.nonzero((dm <= t + 1e-12).any(axis=0))[0].tolist())


def margin_sites(model: LatticeModel, sites: int) -> float:
    """Physical length of an integer lattice-site margin."""
    return sites * model.spacing
