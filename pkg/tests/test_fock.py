import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtlab.fock import (FockState, Frozen, Space, amplitude, embed, full_space, localized_orbital, mass_outside,
                        norm, number_weighted_norm, orbital_packet, partial_evaluate, product_state, random_state,
                        restrict, support3, symmetrize)
from mtlab.model import build_model

SMALL = build_model(dict(sites=4, fermions=2, nmax=2))


def _random_raw(space, seed):
    return random_state(space, np.random.default_rng(seed), symmetrized=False)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_symmetrize_is_idempotent_and_has_right_exchange_parity(seed):
    sp = full_space(SMALL)
    s = symmetrize(_random_raw(sp, seed))
    again = symmetrize(s)
    assert all(np.max(np.abs(a - b)) < 1e-14 for a, b in zip(s.sectors, again.sectors))
    for n, arr in enumerate(s.sectors):
        # fermion transposition: sign flip; every boson transposition: no change
        assert np.allclose(np.swapaxes(arr, 0, 1), -arr, atol=1e-14)
        for i, j in itertools.combinations(range(2, 2 + n), 2):
            assert np.allclose(np.swapaxes(arr, i, j), arr, atol=1e-14)


def test_symmetrize_boson_pair_by_explicit_transposition():
    m = build_model(dict(sites=4, fermions=1, nmax=2))
    raw = _random_raw(full_space(m), 5)
    sym = symmetrize(raw).sectors[2]
    r = raw.sectors[2]
    # oracle: average over the two boson orderings, antisymmetrization is trivial for one fermion
    oracle = 0.5 * (r + np.transpose(r, (0, 2, 1)))
    assert np.allclose(sym, oracle, atol=1e-15)


def test_pauli_exclusion():
    sp = full_space(SMALL)
    f = orbital_packet(SMALL, 1, 2.0, [1.0, 0.0])
    with pytest.raises(ValueError, match="vanishes"):
        product_state(sp, [f, f])


def test_norm_examples():
    m = build_model(dict(sites=4, fermions=1, nmax=2))
    sp = full_space(m)
    vac = FockState.zeros(sp)
    vac.sectors[0][0] = 1.0
    assert number_weighted_norm(vac, 1) == 0.0
    two = FockState.zeros(sp)
    two.sectors[2][0, 0, 0] = 1.0
    assert number_weighted_norm(two, 1) == pytest.approx(math.sqrt(2))
    r = random_state(sp, np.random.default_rng(3))
    assert number_weighted_norm(r, 0) == norm(r)


def test_norm_uses_lattice_cell_weight():
    m = build_model(dict(sites=8, spacing=0.5, delta=0.75, fermions=1, nmax=1))
    sp = full_space(m)
    st_ = FockState.zeros(sp)
    st_.sectors[1][0, 0] = 1.0
    assert norm(st_) ** 2 == pytest.approx(0.5 ** 2)


def test_support_examples():
    m = build_model(dict(sites=8, fermions=1, nmax=2))
    sp = full_space(m)
    assert support3(FockState.zeros(sp), "x") == set()
    loc = product_state(sp, [localized_orbital(m, 3, 1)])
    assert support3(loc, "x") == {3}
    st_ = FockState.zeros(sp)
    st_.sectors[1][0, 2 * 2] = 1.0
    st_.sectors[1][0, 5 * 2 + 1] = 1.0
    assert support3(st_, "y") == {2, 5}
    assert mass_outside(st_, None, {2}) == pytest.approx(1.0)


def test_partial_evaluate_identity_and_product():
    m = build_model(dict(sites=5, fermions=1, nmax=2))
    sp = full_space(m)
    r = random_state(sp, np.random.default_rng(1))
    same = partial_evaluate(r, [])
    assert all(np.array_equal(a, b) for a, b in zip(same.sectors, r.sectors))
    f = orbital_packet(m, 2, 2.0, [1.0, 0.4j])
    h = orbital_packet(m, 3, 2.0, [0.2, 1.0])
    prod = product_state(sp, [f], [h])
    out = partial_evaluate(prod, [Frozen("x", 1, 1, slot=0)])
    # both orbitals are unit-normalized, so the product needs no rescaling
    assert np.allclose(out.sectors[1], f[sp.index(1, 1)] * h, atol=1e-15)
    assert out.space.fermions == 0


def test_partial_evaluate_boson_slot_independence():
    m = build_model(dict(sites=4, fermions=1, nmax=2))
    sp = full_space(m)
    s = random_state(sp, np.random.default_rng(9))
    Y = sp.index(2, 1)
    via_last = partial_evaluate(s, [Frozen("y", 2, 1)]).sectors[1]
    via_first = s.sectors[2][:, Y, :]  # slot N-1 after swapping: symmetric, so identical
    assert np.array_equal(via_last, via_first)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(0, 3), st.integers(0, 1))
def test_partial_evaluate_fermion_matches_amplitude(seed, site, spin):
    sp = full_space(SMALL)
    s = random_state(sp, np.random.default_rng(seed))
    out = partial_evaluate(s, [Frozen("x", site, spin, slot=1)])
    for other in range(4):
        assert out.sectors[1][sp.index(other, 0), sp.index(3 - other, 1)] == \
            amplitude(s, [(other, 0), (site, spin)], [(3 - other, 1)])


def test_restrict_embed_round_trip():
    m = build_model(dict(sites=6, fermions=1, nmax=1))
    sp = full_space(m)
    s = random_state(sp, np.random.default_rng(2))
    win = restrict(s, [1, 2, 3])
    back = embed(win, sp)
    assert mass_outside(back, {1, 2, 3}, {1, 2, 3}) == 0.0
    assert norm(back) ** 2 == pytest.approx(norm(s) ** 2 - mass_outside(s, {1, 2, 3}, {1, 2, 3}), rel=1e-12)


def test_from_vector_rejects_wrong_length():
    sp = full_space(SMALL)
    with pytest.raises(ValueError, match="does not match"):
        FockState.from_vector(sp, np.zeros(sp.dim + 1))


def test_space_dimension():
    m = build_model(dict(sites=4, fermions=1, nmax=1))
    assert Space(m, 1, 1).dim == 8 + 8 * 8
