import itertools

import numpy as np
import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from mtlab.model import ModelError, bump, build_model, dirac_matrices


@pytest.mark.parametrize("dim", [1, 3])
def test_clifford_algebra(dim):
    alphas, beta = dirac_matrices(dim)
    s = beta.shape[0]
    assert s == (2 if dim == 1 else 4)
    eye = np.eye(s)
    for a, b in itertools.product(range(dim), repeat=2):
        anti = alphas[a] @ alphas[b] + alphas[b] @ alphas[a]
        assert np.allclose(anti, 2 * eye * (a == b), atol=1e-15)
    for a in alphas:
        assert np.allclose(a @ beta + beta @ a, 0, atol=1e-15)
    assert np.allclose(beta @ beta, eye)


def test_default_model_pass_through():
    m = build_model(dict(dim=1, sites=8, delta=1.5, masses={"mx": 1, "my": 1}, nmax=2, fermions=1))
    assert (m.spin, m.sites, m.nmax, m.fermions) == (2, 8, 2, 1)
    assert np.array_equal(m.alphas()[0], [[0, 1], [1, 0]])
    assert np.array_equal(m.beta(), [[1, 0], [0, -1]])


@pytest.mark.parametrize("cfg,msg", [
    (dict(delta=0), "cutoff radius must be positive"),
    (dict(delta=0.9), "fewer than 3 sites"),
    (dict(dim=2), "dimension"),
    (dict(masses={"mx": 0}), "masses"),
    (dict(coupling=[1, 2, 3]), "coupling"),
    (dict(sites=8, max_time=2.6), "wraparound"),
])
def test_rejections(cfg, msg):
    with pytest.raises(ModelError, match=msg):
        build_model(cfg)


def test_cutoff_profile_values(model):
    cut = model.cut
    center = cut.as_dict()[(0,)]
    assert center == pytest.approx(cut.norm_constant * np.exp(-1.0))
    assert bump(np.array(1.0)) == 0.0
    assert np.sum(cut.values) * model.cell == pytest.approx(1.0, abs=1e-12)
    # delta = 1.5a keeps offsets -1, 0, 1 only
    assert sorted(cut.as_dict()) == [(-1,), (0,), (1,)]
    assert cut.l2_norm == pytest.approx(np.sqrt(np.sum(cut.values ** 2) * model.cell), rel=1e-14)


def test_cutoff_exact_zero_on_sphere():
    # delta = 2a: the sites at distance exactly 2 must be excluded
    m = build_model(dict(sites=10, delta=2.0))
    assert max(abs(o[0]) for o in m.cut.as_dict()) == 1


@settings(max_examples=25, deadline=None)
@given(delta=st.floats(1.05, 3.5), spacing=st.sampled_from([0.5, 1.0]), dim=st.sampled_from([1, 3]))
def test_cutoff_invariants(delta, spacing, dim):
    sites = 16 if dim == 1 else 4
    try:
        m = build_model(dict(dim=dim, sites=sites, delta=delta, spacing=spacing))
    except ModelError:
        return
    cut = m.cut
    assert np.all(cut.values >= 0)
    r = spacing * np.sqrt(np.sum(cut.offsets ** 2, axis=1))
    assert np.all(r < delta)
    assert np.sum(cut.values) * m.cell == pytest.approx(1.0, abs=1e-12)


def test_diagonal_coupling_convention():
    m = build_model(dict(coupling=[[0.3, 0.1], [0.2, 0.0]]))
    g = m.coupling
    assert g.shape == (2, 2, 2)
    assert g[0, 0, 0] == 0.3 + 0.1j and g[1, 1, 0] == 0.3 + 0.1j
    assert g[0, 1, 0] == 0 and g[1, 1, 1] == 0.2


def test_config_round_trip_through_yaml():
    m = build_model(dict(sites=10, spacing=0.5, delta=1.2, nmax=1, fermions=2, masses={"mx": 2.0, "my": 0.5},
                         coupling=[[0.1, 0.2], [0.3, -0.4]], max_time=1.0))
    again = build_model(yaml.safe_load(yaml.safe_dump(m.to_config())))
    assert again.to_config() == m.to_config()
    assert np.array_equal(again.coupling, m.coupling)


def test_periodic_distance_is_minimum_image(model):
    assert model.distance(0, 7) == 1.0
    assert model.distance(1, 5) == 4.0
    assert np.allclose(model.distance_matrix(), [[model.distance(a, b) for b in range(8)] for a in range(8)])
