import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtlab.geometry import (SpacetimeConfiguration, finest_partition, grow, is_delta_spacelike,
                            is_hat_delta_spacelike, safety_distance)
from mtlab.model import build_model

M16 = build_model(dict(sites=16, fermions=3))


def cfg(xs, ys=()):
    return SpacetimeConfiguration.build(xs, ys)


def test_safety_distances(model):
    assert safety_distance("x", "x", model) == 3.0
    assert safety_distance("x", "y", model) == 1.5
    assert safety_distance("y", "y", model) == 0.0


def test_spacelike_examples():
    d = M16.delta  # 1.5; 2*delta + 1 = 4
    assert is_delta_spacelike(cfg([(0.0, 0, 0), (0.0, 1, 0)]), M16)
    assert is_delta_spacelike(cfg([(0.0, 0, 0), (1.0, 5, 0)]), M16)
    assert not is_delta_spacelike(cfg([(0.0, 0, 0), (1.0, 3, 0)]), M16)
    # exact threshold is excluded (strict inequality)
    assert not is_delta_spacelike(cfg([(0.0, 0, 0), (1.0, 4, 0)]), M16)
    # x-y with dt = 0.5 at separation delta + 0.4 is not separated; separation is an integer here
    m = build_model(dict(sites=16, delta=1.6))
    assert not is_delta_spacelike(cfg([(0.0, 0, 0)], [(0.5, 2, 0)]), m)
    assert d == 1.5


def test_hat_domain_ignores_bosons():
    q = cfg([(0.0, 0, 0)], [(2.0, 1, 0)])
    assert is_hat_delta_spacelike(q, M16) and not is_delta_spacelike(q, M16)
    assert not is_hat_delta_spacelike(cfg([(0.0, 0, 0), (1.0, 2, 0)]), M16)


def test_partition_examples():
    far = cfg([(0.0, 0, 0), (0.0, 8, 0)], [(0.0, 4, 1)])
    assert len(finest_partition(far, M16).families) == 3
    close = cfg([(0.3, 0, 0), (0.3, 2, 0)])
    assert finest_partition(close, M16).families == ((("x", 0), ("x", 1)),)
    chain = cfg([(0.1, 0, 0), (0.1, 3, 0), (0.1, 6, 1)])
    assert len(finest_partition(chain, M16).families) == 1


def _brute_partition(q, model):
    """Fixed-point merging of families, independent of union-find."""
    fams = [{lab} for lab in q.labels()]
    changed = True
    while changed:
        changed = False
        for i in range(len(fams)):
            for j in range(i + 1, len(fams)):
                for a in fams[i]:
                    for b in fams[j]:
                        pa, pb = q.particle(a), q.particle(b)
                        d = safety_distance(a[0], b[0], model)
                        if pa.t == pb.t and model.distance(pa.site, pb.site) <= d:
                            fams[i] |= fams.pop(j)
                            changed = True
                            break
                    if changed:
                        break
                if changed:
                    break
            if changed:
                break
    return sorted(tuple(sorted(f)) for f in fams)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.sampled_from([0.0, 0.5]), st.integers(0, 15), st.integers(0, 1)), min_size=1, max_size=3),
       st.lists(st.tuples(st.sampled_from([0.0, 0.5]), st.integers(0, 15), st.integers(0, 1)), max_size=3))
def test_partition_matches_fixed_point_merging(xs, ys):
    q = cfg(xs, ys)
    part = finest_partition(q, M16, check=False)
    assert sorted(part.families) == _brute_partition(q, M16)
    times = [q.particle(f[0]).t for f in part.families]
    assert times == sorted(times)
    for fam in part.families:
        assert len({q.particle(l).t for l in fam}) == 1


def test_grow_examples():
    assert grow(set(), 2.0, M16) == set()
    assert grow({0}, 2.0, M16) == {14, 15, 0, 1, 2}


@settings(max_examples=40, deadline=None)
@given(st.sets(st.integers(0, 15), max_size=4), st.integers(0, 3), st.integers(0, 3))
def test_grow_composes(region, s, t):
    # exact on the 1d lattice for growth lengths that are multiples of the spacing
    assert grow(grow(region, s, M16), t, M16) == grow(region, s + t, M16)


@settings(max_examples=30, deadline=None)
@given(st.sets(st.integers(0, 15), min_size=1, max_size=4), st.floats(0, 5))
def test_grow_brute_force(region, t):
    brute = {y for y in range(16) for x in region if min(abs(x - y), 16 - abs(x - y)) <= t}
    assert grow(region, t, M16) == brute


def test_replace_and_records():
    q = cfg([(0.0, 1, 0), (0.5, 5, 1)], [(0.2, 3, 1)])
    q2 = q.replace(("x", 1), t=0.7, site=6)
    assert q2.particle(("x", 1)).t == 0.7 and q2.particle(("x", 1)).site == 6
    assert q.particle(("x", 1)).t == 0.5
    assert SpacetimeConfiguration.from_records(q.to_records()) == q
