import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtlab.fock import Space, embed, full_space, norm, orbital_packet, product_state, random_state, restrict
from mtlab.model import build_model
from mtlab.operators import full_hamiltonian, weight_vector
from mtlab.propagate import (Propagator, current_divergence_check, evolve, green_dirac_residual, green_function,
                             green_mass_outside, krylov_expmv, local_evolve, norm_rate_fd, trotter_evolve)


def test_zero_time_is_identity(model, rng):
    s = random_state(full_space(model), rng)
    assert np.array_equal(evolve(s, 0.0).vector(), s.vector())


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(-2.0, 2.0))
def test_unitarity(seed, t):
    m = build_model(dict(sites=6, nmax=2, coupling=[0.4, 0.2]))
    s = random_state(full_space(m), np.random.default_rng(seed))
    assert norm(evolve(s, t)) == pytest.approx(norm(s), rel=1e-10)


def test_free_fermion_against_fft_oracle():
    L, a = 12, 1.0
    m = build_model(dict(sites=L, nmax=0, mx=0.8, coupling=[0, 0]))
    f = orbital_packet(m, 5, 3.0, [1.0, 0.3j], k=0.7)
    psi = product_state(full_space(m), [f])
    t = 1.3
    out = evolve(psi, t).sectors[0].reshape(L, 2)
    # momentum space: fhat(k) evolves with exp(-i h(k) t), h(k) = sin(ka)/a sigma1 + m sigma3
    fk = np.fft.fft(f.reshape(L, 2), axis=0)
    ks = 2 * np.pi * np.fft.fftfreq(L, d=a)
    res = np.empty_like(fk)
    for i, k in enumerate(ks):
        h = np.array([[m.mx, np.sin(k * a) / a], [np.sin(k * a) / a, -m.mx]])
        E, V = np.linalg.eigh(h)
        res[i] = V @ (np.exp(-1j * E * t) * (V.conj().T @ fk[i]))
    oracle = np.fft.ifft(res, axis=0)
    assert np.max(np.abs(out - oracle)) < 1e-12


def test_krylov_matches_dense(rng):
    m = build_model(dict(sites=4, fermions=2, nmax=1, delta=1.2, coupling=[0.3, 0.1j]))
    s = random_state(full_space(m), rng)
    a = Propagator(full_hamiltonian(m), "exact").apply(s, 0.9)
    b = Propagator(full_hamiltonian(m), "krylov", tol=1e-12).apply(s, 0.9)
    assert norm(a - b) < 1e-10


def test_krylov_expmv_small_matrix():
    rng = np.random.default_rng(5)
    A = rng.normal(size=(20, 20)) + 1j * rng.normal(size=(20, 20))
    H = A + A.conj().T
    v = rng.normal(size=20) + 0j
    E, V = np.linalg.eigh(H)
    exact = V @ (np.exp(-2.0j * E) * (V.conj().T @ v))
    out, err = krylov_expmv(lambda x: H @ x, v, 2.0, tol=1e-12, m=8)
    assert np.linalg.norm(out - exact) < 1e-9


def test_reduced_space_propagation_is_similar_to_unitary():
    m = build_model(dict(sites=6, spacing=0.5, delta=0.75, nmax=3, coupling=[[0.3, 0.1], [0.2, -0.2]]))
    sp = Space(m, 1, 2, 1)
    v = random_state(sp, np.random.default_rng(3)).vector()
    P = Propagator(full_hamiltonian(sp))
    w = weight_vector(sp)
    out = P.apply_vector(v, 0.7)
    assert np.linalg.norm(w * out) == pytest.approx(np.linalg.norm(w * v), rel=1e-12)
    # group property
    assert np.allclose(P.apply_vector(P.apply_vector(v, 0.3), 0.4), out, atol=1e-12)


def test_trotter_commuting_case_exact():
    m = build_model(dict(sites=6, nmax=2, coupling=[0, 0]))
    s = random_state(full_space(m), np.random.default_rng(0))
    for n in (1, 3):
        assert norm(trotter_evolve(s, 0.8, n) - evolve(s, 0.8, tol=1e-13)) < 1e-12


def test_trotter_first_order(model, rng):
    s = random_state(full_space(model), rng)
    exact = evolve(s, 1.0, tol=1e-13)
    errs = [norm(trotter_evolve(s, 1.0, n) - exact) for n in (4, 8, 16, 32)]
    assert all(errs[i] / errs[i + 1] >= 1.8 for i in range(3))


def test_trotter_single_step_short_time(model, rng):
    s = random_state(full_space(model), rng)
    e = [norm(trotter_evolve(s, t, 1) - evolve(s, t, tol=1e-14)) for t in (0.02, 0.01)]
    assert e[0] / e[1] == pytest.approx(4.0, rel=0.05)


def test_green_function_properties():
    m = build_model(dict(sites=16, my=4.0, coupling=[[0.1, 0.0], [0.05, 0.0]]))
    table = green_function(m, [0.0, 0.5, 1.0, 2.0])
    g0 = m.coupling[:, :, None, :] * m.phi[:, 0][None, None, :, None]
    assert np.array_equal(table.at(0.0), g0)
    for t in (0.5, 1.0, 2.0):
        assert green_dirac_residual(table, t) < 1e-9
        frac = green_mass_outside(table, t, m.delta + t + 2) / green_mass_outside(table, t, -1.0)
        assert frac < 1e-6
    # free evolution conserves the total mass
    assert green_mass_outside(table, 2.0, -1.0) == pytest.approx(green_mass_outside(table, 0.0, -1.0), rel=1e-12)


def test_local_evolve_matches_global():
    m = build_model(dict(sites=24, mx=2.0, my=3.0, nmax=1, coupling=[0.1, 0.05]))
    psi = product_state(full_space(m), [orbital_packet(m, 12, 3.0, [1.0, 0.5])])
    region = range(6, 19)
    glob = restrict(evolve(psi, 1.0, tol=1e-13), region)
    loc = local_evolve(psi, region, 1.0)
    assert norm(glob - loc) < 1e-6
    assert np.array_equal(local_evolve(psi, region, 0.0).vector(), restrict(psi, region).vector())
    whole = local_evolve(psi, range(24), 0.5, window=range(24))
    assert np.array_equal(whole.vector(), evolve(psi, 0.5).vector())


def test_current_global_and_telescoping(model2, rng):
    s = random_state(full_space(model2), rng)
    rep = current_divergence_check(s)
    assert abs(rep.global_rate) < 1e-10
    assert abs(norm_rate_fd(s)) < 1e-10
    assert rep.telescoping_total < 1e-10
    # each sector's source is the difference of the adjacent boundary fluxes
    flux = np.concatenate([[0.0], rep.boundary_flux, [0.0]])
    assert np.allclose(rep.sector_source_sums, flux[1:] - flux[:-1], atol=1e-12)
